#pragma once

#include <json.hpp>

#include "jacmatch/bound.hpp"
#include "jacmatch/noise_lab.hpp"

namespace jm::verify {

// Seeded smooth teacher/student pair whose outputs agree at x (the regime
// the matching propositions address: the data term vanishes at the point,
// leaving the sigma^2 Jacobian term and a sigma^4 tail). Input dimension
// cycles through {1, 2, 3} with the seed.
struct SmoothPair {
    nn::Network teacher;
    nn::Network student;
    ad::Tensor x;
    ad::Tensor y;  // = teacher outputs at x, for the regularizer kinds
};

SmoothPair make_matched_pair(std::uint64_t seed);

struct NoiseEquivReport {
    std::vector<noiselab::SlopeStudy> studies;
    std::vector<std::string> kinds;  // per study
    int in_band = 0;                 // slope within [3.5, 4.5]
    bool all_in_band = false;
    nlohmann::json to_json() const;
};

// Slope studies over `pairs` matched pairs, alternating the Prop-1 distill
// loss and the Prop-2 regularizer. CE-family studies are reported without a
// slope assertion (in_band counts squared-family studies only).
NoiseEquivReport noise_equiv_study(const std::vector<double>& sigmas, int pairs,
                                   bool ce_family, std::uint64_t seed0, int gh_order = 40);

struct ExactnessReport {
    noiselab::ExactnessCertificate relu_fixture;
    noiselab::ExactnessCertificate sigmoid_control;
    bool ok = false;  // relu passes AND the smooth control fails
    nlohmann::json to_json() const;
};

ExactnessReport exactness_fixture(int mc_samples, std::uint64_t seed);

struct BoundTrialsReport {
    int trials = 0;
    int passes = 0;
    double min_slack = 0.0;
    nlohmann::json to_json() const;
};

// Seeded random instances of the transfer inequality: 2-D sigmoid nets,
// 200 source points vs 20 target points per trial.
BoundTrialsReport bound_trials(int n_trials, std::uint64_t seed0 = 0);

struct SupersetTrialsReport {
    int trials = 0;
    int passes = 0;
    nlohmann::json to_json() const;
};

// Superset monotonicity trials, including noise-augmentation supersets.
SupersetTrialsReport superset_trials(int n_trials, std::uint64_t seed0 = 0);

}  // namespace jm::verify
