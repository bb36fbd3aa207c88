#pragma once

// Ground-truth token process for the AR experiments: a seeded first-order
// Markov chain on the sphere where each next direction is Power Spherical
// around a class-specific rotation of the previous one. The radial variant
// scales each token by an iid chi_d radius, giving Gaussian-like norm
// variability with the same directional structure.

#include <cmath>
#include <vector>

#include "sphlat/ar.hpp"
#include "sphlat/directional.hpp"
#include "sphlat/linalg.hpp"

namespace sphlat {

struct SphereProcessSpec {
    int dim = 8;
    double radius = std::sqrt(8.0);
    double kappa = 8.0;
    int n_classes = 2;
    int grid_h = 2;
    int grid_w = 4;
    bool radial_chi = false;  // true: token norm ~ chi_d instead of constant R
    std::uint64_t seed = 1;

    int tokens() const { return grid_h * grid_w; }
};

class SphereProcess {
  public:
    explicit SphereProcess(SphereProcessSpec spec) : spec_(spec) {
        RngStream rng(spec_.seed, 0xF00);
        for (int c = 0; c < spec_.n_classes; ++c)
            rotations_.push_back(random_orthogonal(static_cast<std::size_t>(spec_.dim),
                                                   rng));
    }

    const SphereProcessSpec& spec() const { return spec_; }
    const Matrix& rotation(int class_id) const {
        return rotations_.at(static_cast<std::size_t>(class_id));
    }

    TokenSequence sample_sequence(int class_id, RngStream& rng) const {
        const int d = spec_.dim;
        const Matrix& rot = rotation(class_id);
        TokenSequence seq;
        seq.grid_h = spec_.grid_h;
        seq.grid_w = spec_.grid_w;
        seq.radius = spec_.radial_chi ? 0.0 : spec_.radius;
        seq.label = class_id;
        UnitDirection u = sample_uniform_sphere(d, rng);
        for (int k = 0; k < spec_.tokens(); ++k) {
            if (k > 0) {
                const UnitDirection mean = UnitDirection::normalized(matvec(rot, u.coords()));
                u = ps_sample(PowerSphericalParams(mean, spec_.kappa), rng);
            }
            Vec z(u.coords());
            const double r = spec_.radial_chi ? chi_radius(d, rng) : spec_.radius;
            for (double& x : z) x *= r;
            seq.tokens.push_back(std::move(z));
        }
        return seq;
    }

    std::vector<TokenSequence> sample_dataset(int per_class, RngStream& rng) const {
        std::vector<TokenSequence> out;
        for (int c = 0; c < spec_.n_classes; ++c)
            for (int i = 0; i < per_class; ++i) out.push_back(sample_sequence(c, rng));
        return out;
    }

    // Expected cosine between u_{k+1} and the rotated u_k.
    double step_mean_cosine() const {
        return spec_.kappa / (spec_.dim - 1.0 + spec_.kappa);
    }

    // Empirical per-step alignment of a sequence with the class rotation,
    // averaged over consecutive pairs.
    double sequence_alignment(const TokenSequence& seq) const {
        const Matrix& rot = rotation(seq.label);
        double acc = 0.0;
        int n = 0;
        for (std::size_t k = 0; k + 1 < seq.tokens.size(); ++k) {
            Vec u = seq.tokens[k];
            const double nu = norm2(u);
            if (nu <= 0.0) continue;
            for (double& x : u) x /= nu;
            Vec v = seq.tokens[k + 1];
            const double nv = norm2(v);
            if (nv <= 0.0) continue;
            for (double& x : v) x /= nv;
            acc += dot(matvec(rot, u), v);
            ++n;
        }
        return n ? acc / static_cast<double>(n) : 0.0;
    }

  private:
    static double chi_radius(int d, RngStream& rng) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            const double g = rng.normal();
            s += g * g;
        }
        return std::sqrt(s);
    }

    SphereProcessSpec spec_;
    std::vector<Matrix> rotations_;
};

}  // namespace sphlat
