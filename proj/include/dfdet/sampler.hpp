#pragma once

#include <vector>

#include "dfdet/manifest.hpp"
#include "dfdet/rng.hpp"

// Class-balancing video sampler: draws the class by a fair coin, then a
// uniform video within it, so the long-run class frequency is 1/2 regardless
// of the split's real:fake ratio.

namespace dfdet {

class BalancedSampler {
public:
    BalancedSampler(const Manifest& manifest, Split split, Rng rng) : rng_(rng) {
        for (const auto& r : manifest.records) {
            if (r.split != split) continue;
            (r.label == Label::real ? reals_ : fakes_).push_back(&r);
        }
        if (reals_.empty() || fakes_.empty())
            throw ContractError(std::string("BalancedSampler: split '") + to_string(split) +
                                "' must contain both classes");
    }

    const VideoRecord* next() {
        const auto& pool = rng_.bernoulli(0.5) ? fakes_ : reals_;
        return pool[rng_.uniform_index(pool.size())];
    }

    std::size_t size() const { return reals_.size() + fakes_.size(); }

private:
    std::vector<const VideoRecord*> reals_;
    std::vector<const VideoRecord*> fakes_;
    Rng rng_;
};

}  // namespace dfdet
