#include "tempo/pinpolicy.hpp"

#include <algorithm>
#include <cmath>

namespace tempo::pin {

void PolicyParams::validate(std::size_t buffer_count) const {
    require(alpha.size() == buffer_count,
            "pin policy: alpha must have one weight per buffer");
    for (double a : alpha) require(a >= 0.0, "pin policy: alpha weights must be >= 0");
    require(beta >= 0.0 && gamma >= 0.0 && delta >= 0.0 && eta >= 0.0 && xi >= 0.0,
            "pin policy: hyperparameters must be non-negative");
    require(rho >= 0.0 && rho <= 1.0, "pin policy: rho must lie in [0, 1]");
    require(window >= 1, "pin policy: window must be >= 1");
}

PolicyParams PolicyParams::defaults(std::size_t buffer_count) {
    PolicyParams p;
    p.alpha.assign(buffer_count, buffer_count ? 1.0 / double(buffer_count) : 1.0);
    return p;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

int allocate(std::span<const double> signature, const std::vector<StagingBuffer>& buffers,
             const PolicyParams& p) {
    require(!buffers.empty(), "allocate: no staging buffers");
    p.validate(buffers.size());
    int best = 0;
    double best_score = 0.0;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        require(buffers[i].signature.size() == signature.size(),
                "allocate: signature dimension mismatch on buffer " + std::to_string(i));
        const double score = p.alpha[i] * cosine_similarity(signature, buffers[i].signature) -
                             p.beta * (buffers[i].pinned ? 1.0 : 0.0);
        if (i == 0 || score > best_score) {
            best = int(i);
            best_score = score;
        }
    }
    return best;
}

double pin_score(std::span<const std::uint8_t> history, const PolicyParams& p) {
    require(history.size() >= 2, "pin_score: history must hold at least 2 entries");
    const std::size_t T = history.size() - 1;
    double sum = 0.0;
    for (std::size_t t = 1; t <= T; ++t) {
        const double cur = history[t] ? 1.0 : 0.0;
        const double prev = history[t - 1] ? 1.0 : 0.0;
        sum += p.gamma * cur - p.delta * std::fabs(cur - prev);
    }
    return sum / double(T);
}

std::vector<double> update_memory(std::span<const double> memory,
                                  std::span<const double> fresh, bool pinned,
                                  std::span<const double> memory_grad,
                                  const PolicyParams& p) {
    require(memory.size() == fresh.size() && memory.size() == memory_grad.size(),
            "update_memory: dimension mismatch");
    std::vector<double> out(memory.size());
    const double pin_flag = pinned ? 1.0 : 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = p.rho * memory[i] +
                 (1.0 - p.rho) * (p.eta * fresh[i] + p.xi * pin_flag * memory_grad[i]);
    }
    return out;
}

void repin(std::vector<StagingBuffer>& buffers, const PolicyParams& p) {
    require(!buffers.empty(), "repin: no staging buffers");
    p.validate(buffers.size());

    std::vector<double> scores(buffers.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        const auto& h = buffers[i].pin_history;
        require(h.size() >= 2, "repin: buffer " + std::to_string(i) +
                                   " has fewer than 2 history entries");
        const std::size_t len = std::min(std::size_t(p.window) + 1, h.size());
        scores[i] = pin_score({h.data() + (h.size() - len), len}, p);
        mean += scores[i];
    }
    mean /= double(buffers.size());

    bool any_pinned = false;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        if (scores[i] > mean) {
            buffers[i].pinned = true;
        } else if (scores[i] < mean) {
            buffers[i].pinned = false;
        }  // exactly at the mean: keep the current flag
        any_pinned = any_pinned || buffers[i].pinned;
    }
    if (!any_pinned) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < buffers.size(); ++i)
            if (scores[i] > scores[best]) best = i;
        buffers[best].pinned = true;
    }
    for (auto& b : buffers) b.pin_history.push_back(b.pinned ? 1 : 0);
}

}  // namespace tempo::pin
