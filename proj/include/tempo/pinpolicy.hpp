#pragma once

#include <span>
#include <vector>

#include "tempo/staging.hpp"

namespace tempo::pin {

// Hyperparameters of the pin policy. alpha holds one attention weight per
// buffer; beta penalizes allocating into pinned buffers; gamma rewards time
// spent pinned and delta penalizes pin-status churn; rho is the forgetting
// factor of the memory update, eta its refresh rate and xi the weight of the
// memory-gradient term; window is the scoring horizon T.
struct PolicyParams {
    std::vector<double> alpha;
    double beta = 0.1;
    double gamma = 1.0;
    double delta = 0.5;
    double rho = 0.9;
    double eta = 0.1;
    double xi = 0.1;
    int window = 8;

    void validate(std::size_t buffer_count) const;
    static PolicyParams defaults(std::size_t buffer_count);
};

/// Cosine similarity with the zero-vector convention sim(., 0) = 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Picks the buffer receiving the next batch:
/// argmax_i ( alpha_i * sim(signature, m_i) - beta * P_i ), ties to the
/// lowest index.
int allocate(std::span<const double> signature, const std::vector<StagingBuffer>& buffers,
             const PolicyParams& p);

/// (1/T) * sum_{t=1..T} ( gamma * P^t - delta * |P^t - P^{t-1}| ) over a
/// history of length T+1. Bounded in [-delta, gamma].
double pin_score(std::span<const std::uint8_t> history, const PolicyParams& p);

/// rho * m + (1 - rho) * (eta * h + xi * P * grad_m), element-wise.
std::vector<double> update_memory(std::span<const double> memory,
                                  std::span<const double> fresh, bool pinned,
                                  std::span<const double> memory_grad,
                                  const PolicyParams& p);

/// Re-decides pin flags from the scores of the last `window` ticks: above the
/// mean score pins, below unpins, exactly at the mean keeps the current flag.
/// At least one buffer always stays pinned. The decision is appended to every
/// pin history.
void repin(std::vector<StagingBuffer>& buffers, const PolicyParams& p);

}  // namespace tempo::pin
