#pragma once

#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "perfmpg/game.hpp"
#include "perfmpg/rng.hpp"

namespace perfmpg {

/// The performative environment: a deterministic map from joint policies to
/// deployed games of identical shape. respond() results are memoized per
/// policy digest behind a small thread-safe cache; a hit is bit-identical to a
/// miss because the map itself is a pure function.
class ResponseMap {
  public:
    using RespondFn = std::function<TabularGame(const JointPolicy&)>;

    ResponseMap(TabularGame base, RespondFn respond, std::string label,
                nlohmann::json params = nlohmann::json::object(),
                bool common_payoff = false, std::size_t cache_capacity = 8)
        : base_(std::make_shared<const TabularGame>(std::move(base))),
          respond_(std::move(respond)),
          label_(std::move(label)),
          params_(std::move(params)),
          common_payoff_(common_payoff),
          cache_capacity_(cache_capacity) {}

    const TabularGame& base() const { return *base_; }
    const std::string& label() const { return label_; }
    const nlohmann::json& params() const { return params_; }

    /// Whether every deployed game is common-payoff (so V of any agent is an
    /// exact potential). Set by the environment constructors.
    bool common_payoff() const { return common_payoff_; }

    std::shared_ptr<const TabularGame> respond(const JointPolicy& pi) const {
        std::vector<double> key = flatten(pi);
        const std::uint64_t digest =
            fnv1a(key.data(), key.size() * sizeof(double));
        {
            std::lock_guard<std::mutex> lock(mutex_);
            for (const auto& entry : cache_) {
                if (entry.digest == digest && entry.key == key) return entry.game;
            }
        }
        auto game = std::make_shared<const TabularGame>(respond_(pi));
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (cache_.size() >= cache_capacity_) cache_.pop_front();
            cache_.push_back({digest, std::move(key), game});
        }
        return game;
    }

  private:
    static std::vector<double> flatten(const JointPolicy& pi) {
        std::vector<double> flat;
        flat.reserve(16);
        flat.push_back(static_cast<double>(pi.num_states));
        for (const auto& table : pi.probs) {
            flat.push_back(static_cast<double>(table.size()));
            flat.insert(flat.end(), table.begin(), table.end());
        }
        return flat;
    }

    struct CacheEntry {
        std::uint64_t digest;
        std::vector<double> key;
        std::shared_ptr<const TabularGame> game;
    };

    std::shared_ptr<const TabularGame> base_;
    RespondFn respond_;
    std::string label_;
    nlohmann::json params_;
    bool common_payoff_;
    std::size_t cache_capacity_;
    mutable std::mutex mutex_;
    mutable std::deque<CacheEntry> cache_;
};

/// Deploys a joint policy: returns the induced game after checking that the
/// policy matches the base shape and that the environment produced a valid
/// game. A structural violation here signals an environment bug.
inline std::shared_ptr<const TabularGame> deploy(const ResponseMap& map,
                                                 const JointPolicy& pi) {
    if (!(map.base().shape() == pi.shape()))
        throw ShapeMismatch("policy does not match the environment's base game");
    auto game = map.respond(pi);
    try {
        validate_game(*game);
    } catch (const ValidationError& e) {
        throw InvalidResponse(std::string("environment produced an invalid game: ") +
                              e.what());
    }
    if (!(game->shape() == map.base().shape()) ||
        game->discount != map.base().discount)
        throw InvalidResponse("environment changed the game shape");
    return game;
}

/// Environment whose respond ignores the policy (zero performativity).
inline ResponseMap constant_response_map(TabularGame base, std::string label = "constant",
                                         bool common_payoff = false) {
    TabularGame copy = base;
    return ResponseMap(
        std::move(base), [copy](const JointPolicy&) { return copy; }, std::move(label),
        nlohmann::json::object(), common_payoff);
}

} // namespace perfmpg
