#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "fracbio/error.hpp"

namespace fracbio {

using Complex = std::complex<double>;

struct ExpTerm {
    double coeff = 0.0;
    double delay = 0.0;

    friend bool operator==(const ExpTerm&, const ExpTerm&) = default;
};

/**
 * Monic second-order retarded quasi-polynomial
 *
 *   q(λ) = λ² + p1·λ + p0 + Σ_j c_j·exp(-d_j·λ),   d_j >= 0.
 *
 * Exponential terms are kept sorted by delay (stable, so terms sharing a
 * delay keep their construction order).
 */
class QuasiPolynomial {
public:
    QuasiPolynomial() = default;

    QuasiPolynomial(double p1, double p0, std::vector<ExpTerm> terms = {})
        : p1_(p1), p0_(p0), terms_(std::move(terms)) {
        for (const auto& t : terms_) {
            if (!(t.delay >= 0.0) || !std::isfinite(t.delay))
                throw DomainError("quasi-polynomial delay must be finite and nonnegative, got "
                                  + std::to_string(t.delay));
        }
        std::stable_sort(terms_.begin(), terms_.end(),
                         [](const ExpTerm& l, const ExpTerm& r) { return l.delay < r.delay; });
    }

    double p1() const noexcept { return p1_; }
    double p0() const noexcept { return p0_; }
    const std::vector<ExpTerm>& exp_terms() const noexcept { return terms_; }

    double max_delay() const noexcept { return terms_.empty() ? 0.0 : terms_.back().delay; }

    Complex operator()(Complex lambda) const {
        Complex v = lambda * lambda + p1_ * lambda + p0_;
        for (const auto& t : terms_)
            v += t.coeff * std::exp(-t.delay * lambda);
        return v;
    }

    Complex derivative(Complex lambda) const {
        Complex v = 2.0 * lambda + p1_;
        for (const auto& t : terms_)
            v -= t.coeff * t.delay * std::exp(-t.delay * lambda);
        return v;
    }

    /// r(λ) = q(λ - σ). Roots move right by σ; still monic and retarded.
    QuasiPolynomial shifted(double sigma) const {
        std::vector<ExpTerm> terms;
        terms.reserve(terms_.size());
        for (const auto& t : terms_)
            terms.push_back({t.coeff * std::exp(t.delay * sigma), t.delay});
        return {p1_ - 2.0 * sigma, sigma * sigma - p1_ * sigma + p0_, std::move(terms)};
    }

    /// Radius beyond which |q(λ)| > 0 for every Re λ >= 0:
    /// |q| >= |λ|² - |p1||λ| - (|p0| + Σ|c_j|) because |exp(-dλ)| <= 1 there.
    double right_half_plane_root_radius() const noexcept {
        double c = std::abs(p0_);
        for (const auto& t : terms_)
            c += std::abs(t.coeff);
        const double b = std::abs(p1_);
        return 0.5 * (b + std::sqrt(b * b + 4.0 * c));
    }

    friend bool operator==(const QuasiPolynomial&, const QuasiPolynomial&) = default;

private:
    double p1_ = 0.0;
    double p0_ = 0.0;
    std::vector<ExpTerm> terms_;
};

} // namespace fracbio
