#pragma once

#include <stdexcept>
#include <string>

namespace fracbio {

/// A formula was evaluated outside the set where it is real-valued or where
/// a precondition holds (negative base under a fractional power, s* >= s0,
/// and so on).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A quasi-polynomial does not have the shape an operation expects.
class StructureError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The root-counting contour kept passing through (or too close to) a root.
class ContourError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Not enough information to produce a result (flat data, zero controller
/// authority, too few envelope peaks).
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Step size incompatible with the delays of the problem.
class StepSizeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The integrated state stopped being finite.
class BlowUpError : public std::runtime_error {
public:
    BlowUpError(const std::string& what, double last_valid_time)
        : std::runtime_error(what), last_valid_time_(last_valid_time) {}

    double last_valid_time() const noexcept { return last_valid_time_; }

private:
    double last_valid_time_;
};

/// Malformed input files or configuration.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace fracbio
