#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "genret/catalog.hpp"
#include "genret/decoder.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/prompting.hpp"
#include "genret/scorer.hpp"
#include "genret/trie.hpp"

namespace genret {

using Tick = std::int64_t;

struct StoredList {
    RetrievalList list;
    Tick generated_at = 0;
};

/// Per-user precomputed lists and behavior logs. Lists are immutable once
/// published; publication swaps a pointer, so a reader holds either the old
/// or the new list in full.
class FeatureStore {
public:
    [[nodiscard]] std::shared_ptr<const StoredList> list(const std::string& user_id) const {
        std::shared_lock lock(lists_mu_);
        auto it = lists_.find(user_id);
        return it == lists_.end() ? nullptr : it->second;
    }

    void publish(const std::string& user_id, StoredList entry) {
        auto fresh = std::make_shared<const StoredList>(std::move(entry));
        std::unique_lock lock(lists_mu_);
        lists_[user_id] = std::move(fresh);
    }

    [[nodiscard]] std::size_t list_count() const {
        std::shared_lock lock(lists_mu_);
        return lists_.size();
    }

    void put_user(UserRecord user) {
        std::unique_lock lock(users_mu_);
        const std::string id = user.profile.user_id;
        users_[id] = std::move(user);
    }

    [[nodiscard]] std::optional<UserRecord> user(const std::string& user_id) const {
        std::shared_lock lock(users_mu_);
        auto it = users_.find(user_id);
        if (it == users_.end()) return std::nullopt;
        return it->second;
    }

    /// Appends an event as the newest in the user's log.
    bool append_event(const std::string& user_id, BehaviorEvent e) {
        std::unique_lock lock(users_mu_);
        auto it = users_.find(user_id);
        if (it == users_.end()) return false;
        it->second.events.push_back(std::move(e));
        return true;
    }

private:
    mutable std::shared_mutex lists_mu_;
    std::unordered_map<std::string, std::shared_ptr<const StoredList>> lists_;
    mutable std::shared_mutex users_mu_;
    std::unordered_map<std::string, UserRecord> users_;
};

struct Request {
    std::string user_id;
    Tick arrival_tick = 0;
    std::optional<BehaviorEvent> event;  ///< behavior recorded after the response
};

/// Splits users into ARPU quantile groups 1..num_groups, group num_groups
/// holding the highest ARPU. Ties in ARPU are ordered by user id.
class AdmissionPolicy {
public:
    AdmissionPolicy(const std::map<std::string, double>& arpu, std::size_t budget_per_tick,
                    std::size_t num_groups = 25)
        : budget_(budget_per_tick), num_groups_(num_groups) {
        if (num_groups_ == 0) throw ConfigError("need at least one ARPU group");
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& [u, a] : arpu) {
            if (!(a >= 0.0)) throw ConfigError("ARPU must be non-negative for user '" + u + "'");
            ranked.emplace_back(a, u);
        }
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t r = 0; r < ranked.size(); ++r)
            groups_[ranked[r].second] = 1 + static_cast<int>(r * num_groups_ / ranked.size());
    }

    [[nodiscard]] std::size_t budget_per_tick() const noexcept { return budget_; }
    [[nodiscard]] std::size_t num_groups() const noexcept { return num_groups_; }

    /// Unknown users fall into the lowest group.
    [[nodiscard]] int group_of(const std::string& user_id) const {
        auto it = groups_.find(user_id);
        return it == groups_.end() ? 1 : it->second;
    }

private:
    std::size_t budget_;
    std::size_t num_groups_;
    std::unordered_map<std::string, int> groups_;
};

/// Round-robin over a shared atomic counter.
class WorkerPool {
public:
    explicit WorkerPool(std::size_t num_workers) : processed_(num_workers) {
        if (num_workers == 0) throw ConfigError("worker pool needs at least one worker");
    }

    [[nodiscard]] std::size_t size() const noexcept { return processed_.size(); }

    std::size_t dispatch() {
        const std::size_t w = static_cast<std::size_t>(counter_.fetch_add(1, std::memory_order_relaxed) % size());
        processed_[w].fetch_add(1, std::memory_order_relaxed);
        return w;
    }

    [[nodiscard]] std::vector<std::size_t> counts() const {
        std::vector<std::size_t> out;
        for (const auto& c : processed_) out.push_back(c.load());
        return out;
    }

private:
    std::atomic<std::uint64_t> counter_{0};
    std::vector<std::atomic<std::size_t>> processed_;
};

/// Dispatches `n_requests` from `dispatchers` threads and returns per-worker counts.
inline std::vector<std::size_t> dispatch(WorkerPool& pool, std::size_t n_requests, std::size_t dispatchers = 1) {
    if (dispatchers <= 1) {
        for (std::size_t i = 0; i < n_requests; ++i) pool.dispatch();
        return pool.counts();
    }
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < dispatchers; ++t) {
        const std::size_t share = n_requests / dispatchers + (t < n_requests % dispatchers ? 1 : 0);
        threads.emplace_back([&pool, share] {
            for (std::size_t i = 0; i < share; ++i) pool.dispatch();
        });
    }
    for (auto& t : threads) t.join();
    return pool.counts();
}

struct Trigger {
    std::string user_id;
    Tick enqueued_at = 0;
    std::uint64_t seq = 0;
};

struct ServingConfig {
    std::size_t budget_per_tick = 4;
    std::size_t num_workers = 4;
    std::size_t num_groups = 25;
    Tick ticks = 0;            ///< ticks to simulate; at least one past the last arrival
    bool warm_start = false;   ///< precompute every known user before tick 0
    bool concurrent = false;   ///< run admitted decodes on worker threads
    DecodeOptions decode;
    PromptOptions prompt;
    std::optional<Tick> scorer_swap_tick;  ///< daily-refresh stand-in
};

struct ServingStats {
    std::size_t requests = 0;
    std::size_t hits = 0;
    std::size_t misses = 0;
    std::size_t triggers = 0;
    std::size_t admitted = 0;
    std::size_t decode_errors = 0;
    double staleness_sum = 0.0;
    Tick max_staleness = 0;
    Tick max_queue_age = 0;
    std::vector<std::size_t> queue_length;            ///< after each tick's admission
    std::map<int, std::size_t> admitted_per_group;
    std::vector<std::vector<std::string>> admissions;  ///< admitted user ids per tick
};

/// Wires the request path and the nearline path around one store.
class ServingSystem {
public:
    ServingSystem(std::shared_ptr<const NextTokenScorer> scorer, std::shared_ptr<const Trie> trie,
                  std::shared_ptr<const Catalog> catalog, std::shared_ptr<const std::map<std::string, SemanticId>> sids,
                  AdmissionPolicy policy, ServingConfig config)
        : scorer_(std::move(scorer)),
          trie_(std::move(trie)),
          catalog_(std::move(catalog)),
          sids_(std::move(sids)),
          policy_(std::move(policy)),
          config_(std::move(config)),
          pool_(config_.num_workers) {}

    FeatureStore& store() noexcept { return store_; }
    [[nodiscard]] const FeatureStore& store() const noexcept { return store_; }
    [[nodiscard]] const ServingStats& stats() const noexcept { return stats_; }
    [[nodiscard]] const WorkerPool& pool() const noexcept { return pool_; }
    [[nodiscard]] std::size_t queue_size() const noexcept { return queue_.size(); }
    [[nodiscard]] const std::vector<Trigger>& queue() const noexcept { return queue_; }
    [[nodiscard]] const AdmissionPolicy& policy() const noexcept { return policy_; }

    [[nodiscard]] std::size_t decoder_calls() const noexcept { return decoder_calls_.load(); }
    [[nodiscard]] std::size_t request_path_decoder_calls() const noexcept { return request_path_decoder_calls_.load(); }

    void swap_scorer(std::shared_ptr<const NextTokenScorer> next) {
        std::unique_lock lock(scorer_mu_);
        scorer_ = std::move(next);
    }

    /// Latency-sensitive path: store lookup only, then enqueue a nearline
    /// trigger and record the request's behavior.
    std::shared_ptr<const StoredList> handle_request(const Request& req, Tick now) {
        RequestPathGuard guard;
        ++stats_.requests;
        auto entry = store_.list(req.user_id);
        if (entry) {
            ++stats_.hits;
            const Tick age = now - entry->generated_at;
            stats_.staleness_sum += static_cast<double>(age);
            stats_.max_staleness = std::max(stats_.max_staleness, age);
        } else {
            ++stats_.misses;
        }
        queue_.push_back({req.user_id, now, next_seq_++});
        ++stats_.triggers;
        if (req.event) store_.append_event(req.user_id, *req.event);
        return entry;
    }

    /// Picks at most budget_per_tick triggers: highest ARPU group first,
    /// FIFO within a group. The rest stay queued.
    std::vector<Trigger> admit() {
        std::stable_sort(queue_.begin(), queue_.end(), [&](const Trigger& a, const Trigger& b) {
            const int ga = policy_.group_of(a.user_id), gb = policy_.group_of(b.user_id);
            if (ga != gb) return ga > gb;
            return a.seq < b.seq;
        });
        const std::size_t n = std::min(policy_.budget_per_tick(), queue_.size());
        std::vector<Trigger> chosen(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
        queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(queue_.begin(), queue_.end(), [](const Trigger& a, const Trigger& b) { return a.seq < b.seq; });
        return chosen;
    }

    /// Regenerates one user's list and publishes it. False on failure, in
    /// which case the stored list is left alone.
    bool regenerate(const std::string& user_id, Tick now) {
        auto user = store_.user(user_id);
        if (!user) return false;
        try {
            const std::string prompt = inference_prompt(*user, *catalog_, *sids_, config_.prompt);
            RetrievalList list = run_decoder(ScorerContext::from_prompt(prompt));
            store_.publish(user_id, {std::move(list), now});
            return true;
        } catch (const Error&) {
            return false;
        }
    }

    /// Nearline path for one tick.
    void nearline_tick(Tick now) {
        const auto chosen = admit();
        std::vector<std::string> ids;
        std::vector<std::size_t> worker(chosen.size());
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            worker[i] = pool_.dispatch();
            ids.push_back(chosen[i].user_id);
            ++stats_.admitted_per_group[policy_.group_of(chosen[i].user_id)];
        }
        std::vector<char> ok(chosen.size(), 0);
        if (config_.concurrent && pool_.size() > 1 && chosen.size() > 1) {
            std::vector<std::thread> threads;
            for (std::size_t w = 0; w < pool_.size(); ++w) {
                threads.emplace_back([&, w] {
                    for (std::size_t i = 0; i < chosen.size(); ++i)
                        if (worker[i] == w) ok[i] = regenerate(chosen[i].user_id, now);
                });
            }
            for (auto& t : threads) t.join();
        } else {
            for (std::size_t i = 0; i < chosen.size(); ++i) ok[i] = regenerate(chosen[i].user_id, now);
        }
        stats_.admitted += chosen.size();
        for (char o : ok) stats_.decode_errors += o ? 0 : 1;
        stats_.admissions.push_back(std::move(ids));
        stats_.queue_length.push_back(queue_.size());
        for (const auto& t : queue_) stats_.max_queue_age = std::max(stats_.max_queue_age, now - t.enqueued_at);
    }

    /// Precomputes every known user at tick `now`, outside any budget.
    void warm(const std::vector<std::string>& users, Tick now) {
        for (const auto& u : users) regenerate(u, now);
    }

private:
    static inline thread_local bool in_request_path_ = false;

    struct RequestPathGuard {
        RequestPathGuard() { in_request_path_ = true; }
        ~RequestPathGuard() { in_request_path_ = false; }
    };

    RetrievalList run_decoder(const ScorerContext& ctx) {
        decoder_calls_.fetch_add(1);
        if (in_request_path_) request_path_decoder_calls_.fetch_add(1);
        std::shared_ptr<const NextTokenScorer> scorer;
        {
            std::shared_lock lock(scorer_mu_);
            scorer = scorer_;
        }
        return decode(*scorer, ctx, *trie_, config_.decode);
    }

    mutable std::shared_mutex scorer_mu_;
    std::shared_ptr<const NextTokenScorer> scorer_;
    std::shared_ptr<const Trie> trie_;
    std::shared_ptr<const Catalog> catalog_;
    std::shared_ptr<const std::map<std::string, SemanticId>> sids_;
    AdmissionPolicy policy_;
    ServingConfig config_;
    WorkerPool pool_;
    FeatureStore store_;
    std::vector<Trigger> queue_;
    std::uint64_t next_seq_ = 0;
    ServingStats stats_;
    std::atomic<std::size_t> decoder_calls_{0};
    std::atomic<std::size_t> request_path_decoder_calls_{0};
};

struct SimulationReport {
    std::size_t requests = 0;
    std::size_t hits = 0;
    double hit_rate = 0.0;
    double mean_staleness = 0.0;
    Tick max_staleness = 0;
    std::size_t triggers = 0;
    std::size_t admitted = 0;
    std::size_t decode_errors = 0;
    std::size_t final_queue_length = 0;
    std::size_t max_queue_length = 0;
    Tick max_queue_age = 0;
    std::size_t decoder_calls = 0;
    std::size_t request_path_decoder_calls = 0;
    std::map<int, double> admission_share;  ///< share of admitted triggers per ARPU group
    std::vector<std::size_t> worker_counts;

    bool operator==(const SimulationReport&) const = default;
};

inline io::json to_json(const SimulationReport& r) {
    io::json shares = io::json::object();
    for (const auto& [g, s] : r.admission_share) shares[std::to_string(g)] = s;
    return {{"requests", r.requests},
            {"hits", r.hits},
            {"hit_rate", r.hit_rate},
            {"mean_staleness", r.mean_staleness},
            {"max_staleness", r.max_staleness},
            {"triggers", r.triggers},
            {"admitted", r.admitted},
            {"decode_errors", r.decode_errors},
            {"final_queue_length", r.final_queue_length},
            {"max_queue_length", r.max_queue_length},
            {"max_queue_age", r.max_queue_age},
            {"decoder_calls", r.decoder_calls},
            {"request_path_decoder_calls", r.request_path_decoder_calls},
            {"admission_share", shares},
            {"worker_counts", r.worker_counts}};
}

/// Tick loop: requests arriving at tick t are answered, then the nearline
/// path runs once for t. The trace must be tick-ordered.
inline SimulationReport run_simulation(ServingSystem& system, const std::vector<Request>& trace,
                                       const ServingConfig& config, const std::vector<std::string>& warm_users = {},
                                       std::shared_ptr<const NextTokenScorer> swap_to = nullptr) {
    for (std::size_t i = 1; i < trace.size(); ++i)
        if (trace[i].arrival_tick < trace[i - 1].arrival_tick) throw ConfigError("trace is not tick-ordered");
    Tick horizon = config.ticks;
    if (!trace.empty()) horizon = std::max(horizon, trace.back().arrival_tick + 1);
    if (config.warm_start) system.warm(warm_users, 0);

    std::size_t next = 0;
    for (Tick t = 0; t < horizon; ++t) {
        if (config.scorer_swap_tick && *config.scorer_swap_tick == t && swap_to) system.swap_scorer(swap_to);
        while (next < trace.size() && trace[next].arrival_tick == t) system.handle_request(trace[next++], t);
        system.nearline_tick(t);
    }

    const auto& s = system.stats();
    SimulationReport r;
    r.requests = s.requests;
    r.hits = s.hits;
    r.hit_rate = s.requests ? static_cast<double>(s.hits) / static_cast<double>(s.requests) : 0.0;
    r.mean_staleness = s.hits ? s.staleness_sum / static_cast<double>(s.hits) : 0.0;
    r.max_staleness = s.max_staleness;
    r.triggers = s.triggers;
    r.admitted = s.admitted;
    r.decode_errors = s.decode_errors;
    r.final_queue_length = system.queue_size();
    for (auto q : s.queue_length) r.max_queue_length = std::max(r.max_queue_length, q);
    r.max_queue_age = s.max_queue_age;
    r.decoder_calls = system.decoder_calls();
    r.request_path_decoder_calls = system.request_path_decoder_calls();
    for (const auto& [g, n] : s.admitted_per_group)
        r.admission_share[g] = s.admitted ? static_cast<double>(n) / static_cast<double>(s.admitted) : 0.0;
    r.worker_counts = system.pool().counts();
    return r;
}

inline std::vector<Request> load_trace(const std::filesystem::path& path) {
    std::vector<Request> out;
    io::for_each_jsonl(path, [&](const io::json& rec, std::size_t line) {
        Request r{rec.at("user_id").get<std::string>(), rec.at("tick").get<Tick>(), std::nullopt};
        if (!out.empty() && r.arrival_tick < out.back().arrival_tick)
            throw ParseError("trace ticks must be non-decreasing", line);
        if (rec.contains("event")) {
            io::json ev = rec.at("event");
            ev["user_id"] = r.user_id;
            r.event = event_from_json(ev);
        }
        out.push_back(std::move(r));
    });
    return out;
}

}  // namespace genret
