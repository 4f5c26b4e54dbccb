#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "deliberec/error.hpp"
#include "deliberec/io.hpp"
#include "deliberec/random.hpp"

namespace deliberec {

/// One (user, item, rating, review, timestamp) record.
struct Interaction {
    std::string user_id;
    std::string item_id;
    std::string item_title;
    int rating = 0;
    std::string review_text;
    std::int64_t timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

/// (user_id, item_id)
using PairKey = std::pair<std::string, std::string>;

inline std::string to_string(const PairKey& p) { return "(" + p.first + ", " + p.second + ")"; }

/// Chronological order with the (user_id, item_id) tie-break used everywhere.
inline auto sort_key(const Interaction& x) {
    return std::tie(x.timestamp, x.user_id, x.item_id);
}

inline bool chronological_less(const Interaction& a, const Interaction& b) {
    return sort_key(a) < sort_key(b);
}

inline void check_interaction(const Interaction& x) {
    require(!x.user_id.empty() && !x.item_id.empty(), "interaction ids must be non-empty");
    require(x.rating >= 1 && x.rating <= 5, "rating must be in [1,5], got " + std::to_string(x.rating));
    require(x.timestamp >= 0, "timestamp must be non-negative");
}

inline json to_json(const Interaction& x) {
    return json{{"user_id", x.user_id}, {"item_id", x.item_id},   {"title", x.item_title},
                {"rating", x.rating},   {"review", x.review_text}, {"timestamp", x.timestamp}};
}

/// Interactions plus per-user and per-item position indices.
class Corpus {
public:
    Corpus() = default;

    explicit Corpus(std::vector<Interaction> interactions) : interactions_(std::move(interactions)) {
        std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
        for (std::size_t i = 0; i < interactions_.size(); ++i) {
            const auto& x = interactions_[i];
            check_interaction(x);
            if (!seen.emplace(x.user_id, x.item_id, x.timestamp).second)
                fail(ErrorKind::validation, "duplicate interaction " + to_string(PairKey{x.user_id, x.item_id}) +
                                                " at t=" + std::to_string(x.timestamp));
            by_user_[x.user_id].push_back(i);
            by_item_[x.item_id].push_back(i);
        }
    }

    [[nodiscard]] const std::vector<Interaction>& interactions() const noexcept { return interactions_; }
    [[nodiscard]] std::size_t size() const noexcept { return interactions_.size(); }
    [[nodiscard]] bool empty() const noexcept { return interactions_.empty(); }

    [[nodiscard]] bool has_user(const std::string& u) const { return by_user_.contains(u); }
    [[nodiscard]] bool has_item(const std::string& i) const { return by_item_.contains(i); }

    [[nodiscard]] std::span<const std::size_t> user_positions(const std::string& u) const {
        auto it = by_user_.find(u);
        return it == by_user_.end() ? std::span<const std::size_t>{} : std::span<const std::size_t>(it->second);
    }
    [[nodiscard]] std::span<const std::size_t> item_positions(const std::string& i) const {
        auto it = by_item_.find(i);
        return it == by_item_.end() ? std::span<const std::size_t>{} : std::span<const std::size_t>(it->second);
    }

    [[nodiscard]] std::size_t user_count() const noexcept { return by_user_.size(); }
    [[nodiscard]] std::size_t item_count() const noexcept { return by_item_.size(); }

    [[nodiscard]] std::vector<std::string> users() const {
        std::vector<std::string> out;
        for (const auto& [u, _] : by_user_) out.push_back(u);
        return out;
    }
    [[nodiscard]] std::vector<std::string> items() const {
        std::vector<std::string> out;
        for (const auto& [i, _] : by_item_) out.push_back(i);
        return out;
    }

    [[nodiscard]] double mean_rating() const {
        if (interactions_.empty()) return 0.0;
        double s = 0;
        for (const auto& x : interactions_) s += x.rating;
        return s / static_cast<double>(interactions_.size());
    }

    /// Latest interaction of the pair under chronological order, if any.
    [[nodiscard]] std::optional<Interaction> latest(const std::string& user, const std::string& item) const {
        std::optional<Interaction> best;
        for (auto pos : user_positions(user)) {
            const auto& x = interactions_[pos];
            if (x.item_id == item && (!best || chronological_less(*best, x))) best = x;
        }
        return best;
    }

private:
    std::vector<Interaction> interactions_;
    std::map<std::string, std::vector<std::size_t>> by_user_;
    std::map<std::string, std::vector<std::size_t>> by_item_;
};

// ---------------------------------------------------------------------------
// Loading

/// Source field names for each Interaction member.
struct FieldMapping {
    std::string user = "user_id";
    std::string item = "item_id";
    std::string title = "title";
    std::string rating = "rating";
    std::string review = "review";
    std::string timestamp = "timestamp";

    static FieldMapping canonical() { return {}; }
    static FieldMapping amazon() {
        return {"reviewerID", "asin", "title", "overall", "reviewText", "unixReviewTime"};
    }
    static FieldMapping yelp() { return {"user_id", "business_id", "name", "stars", "text", "date"}; }

    static FieldMapping from_json(const json& j) {
        FieldMapping m;
        if (j.is_string()) {
            const auto name = j.get<std::string>();
            if (name == "amazon") return amazon();
            if (name == "yelp") return yelp();
            if (name == "canonical") return m;
            fail(ErrorKind::validation, "unknown field mapping preset '" + name + "'");
        }
        m.user = j.value("user", m.user);
        m.item = j.value("item", m.item);
        m.title = j.value("title", m.title);
        m.rating = j.value("rating", m.rating);
        m.review = j.value("review", m.review);
        m.timestamp = j.value("timestamp", m.timestamp);
        return m;
    }

    [[nodiscard]] json to_json() const {
        return json{{"user", user},     {"item", item},     {"title", title},
                    {"rating", rating}, {"review", review}, {"timestamp", timestamp}};
    }
};

struct LoadStats {
    std::size_t lines = 0;
    std::size_t loaded = 0;
    std::size_t malformed = 0;      ///< not a JSON object
    std::size_t missing_field = 0;  ///< no ids, rating or timestamp
    std::size_t bad_rating = 0;     ///< rating outside [1,5] or non-integral
    std::size_t duplicates = 0;     ///< repeated (user, item, timestamp)

    [[nodiscard]] std::size_t skipped() const { return malformed + missing_field + bad_rating + duplicates; }

    [[nodiscard]] json to_json() const {
        return json{{"lines", lines},         {"loaded", loaded},         {"malformed", malformed},
                    {"missing_field", missing_field}, {"bad_rating", bad_rating}, {"duplicates", duplicates},
                    {"skipped", skipped()}};
    }
};

struct LoadResult {
    Corpus corpus;
    LoadStats stats;
};

namespace detail {

inline std::optional<std::string> id_field(const json& rec, const std::string& key) {
    auto it = rec.find(key);
    if (it == rec.end()) return std::nullopt;
    if (it->is_string()) {
        auto s = it->get<std::string>();
        return s.empty() ? std::nullopt : std::optional(s);
    }
    if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
    return std::nullopt;
}

/// Accepts integer seconds or "YYYY-MM-DD[ HH:MM:SS]" (UTC).
inline std::optional<std::int64_t> timestamp_field(const json& rec, const std::string& key) {
    auto it = rec.find(key);
    if (it == rec.end()) return std::nullopt;
    if (it->is_number_integer()) return it->get<std::int64_t>();
    if (it->is_number_float()) return static_cast<std::int64_t>(it->get<double>());
    if (!it->is_string()) return std::nullopt;
    const auto s = it->get<std::string>();
    std::tm tm{};
    int n = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                        &tm.tm_min, &tm.tm_sec);
    if (n != 3 && n != 6) return std::nullopt;
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    return static_cast<std::int64_t>(timegm(&tm));
}

} // namespace detail

/// Reads newline-delimited JSON reviews. Bad records are skipped and tallied;
/// only an unreadable file is fatal.
inline LoadResult load_reviews(const fs::path& path, const FieldMapping& mapping = {}) {
    LoadResult res;
    std::vector<Interaction> kept;
    std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
    for_each_line(path, [&](std::size_t, std::string_view line) {
        if (line.find_first_not_of(" \t") == std::string_view::npos) return;
        ++res.stats.lines;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) {
            ++res.stats.malformed;
            return;
        }
        auto user = detail::id_field(rec, mapping.user);
        auto item = detail::id_field(rec, mapping.item);
        auto ts = detail::timestamp_field(rec, mapping.timestamp);
        auto rit = rec.find(mapping.rating);
        if (!user || !item || !ts || rit == rec.end() || !rit->is_number()) {
            ++res.stats.missing_field;
            return;
        }
        const double r = rit->get<double>();
        if (r != std::floor(r) || r < 1 || r > 5 || *ts < 0) {
            ++res.stats.bad_rating;
            return;
        }
        Interaction x;
        x.user_id = *user;
        x.item_id = *item;
        x.rating = static_cast<int>(r);
        x.timestamp = *ts;
        if (auto t = rec.find(mapping.title); t != rec.end() && t->is_string()) x.item_title = t->get<std::string>();
        if (x.item_title.empty()) x.item_title = x.item_id;
        if (auto c = rec.find(mapping.review); c != rec.end() && c->is_string()) x.review_text = c->get<std::string>();
        if (!seen.emplace(x.user_id, x.item_id, x.timestamp).second) {
            ++res.stats.duplicates;
            return;
        }
        kept.push_back(std::move(x));
    });
    res.stats.loaded = kept.size();
    res.corpus = Corpus(std::move(kept));
    return res;
}

inline void save_corpus(const fs::path& path, const Corpus& corpus) {
    std::vector<json> recs;
    recs.reserve(corpus.size());
    for (const auto& x : corpus.interactions()) recs.push_back(to_json(x));
    write_jsonl_atomic(path, recs);
}

/// Loads a corpus previously written by save_corpus. Unlike load_reviews,
/// any bad record is an error: persisted splits must be clean.
inline Corpus load_corpus(const fs::path& path) {
    auto res = load_reviews(path, FieldMapping::canonical());
    if (res.stats.skipped() != 0)
        fail(ErrorKind::parse, path.string() + ": " + std::to_string(res.stats.skipped()) + " invalid records");
    return std::move(res.corpus);
}

// ---------------------------------------------------------------------------
// Filtering and splitting

/// Maximal sub-corpus where every user and item has at least k interactions.
/// Removals cascade until a fixpoint is reached.
inline Corpus kcore_filter(const Corpus& corpus, std::size_t k) {
    require(k >= 1, "k must be >= 1");
    const auto& xs = corpus.interactions();
    std::vector<bool> alive(xs.size(), true);
    std::map<std::string, std::size_t> user_deg, item_deg;
    for (const auto& x : xs) {
        ++user_deg[x.user_id];
        ++item_deg[x.item_id];
    }
    std::set<std::string> dead_users, dead_items;
    std::vector<std::size_t> queue_pos;
    auto enqueue_user = [&](const std::string& u) {
        if (dead_users.insert(u).second)
            for (auto p : corpus.user_positions(u)) queue_pos.push_back(p);
    };
    auto enqueue_item = [&](const std::string& i) {
        if (dead_items.insert(i).second)
            for (auto p : corpus.item_positions(i)) queue_pos.push_back(p);
    };
    for (const auto& [u, d] : user_deg)
        if (d < k) enqueue_user(u);
    for (const auto& [i, d] : item_deg)
        if (d < k) enqueue_item(i);
    while (!queue_pos.empty()) {
        const auto p = queue_pos.back();
        queue_pos.pop_back();
        if (!alive[p]) continue;
        alive[p] = false;
        const auto& x = xs[p];
        if (--user_deg[x.user_id] < k) enqueue_user(x.user_id);
        if (--item_deg[x.item_id] < k) enqueue_item(x.item_id);
    }
    std::vector<Interaction> kept;
    for (std::size_t p = 0; p < xs.size(); ++p)
        if (alive[p]) kept.push_back(xs[p]);
    return Corpus(std::move(kept));
}

struct SplitCorpus {
    Corpus train;
    Corpus valid;
    Corpus test;
};

struct SplitReport {
    std::size_t input = 0;
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
    std::size_t cold_start_valid = 0;  ///< valid interactions removed as cold-start
    std::size_t cold_start_test = 0;

    [[nodiscard]] json to_json() const {
        return json{{"input", input},
                    {"train", train},
                    {"valid", valid},
                    {"test", test},
                    {"cold_start_removed", {{"valid", cold_start_valid}, {"test", cold_start_test}}}};
    }
};

struct SplitResult {
    SplitCorpus split;
    SplitReport report;
};

/// Sorts chronologically (ties broken by user then item id), cuts the latest
/// test_fraction as test and the preceding valid_fraction as valid, then drops
/// valid/test interactions whose user or item never occurs in train.
inline SplitResult temporal_split(const Corpus& corpus, double valid_fraction, double test_fraction) {
    require(valid_fraction > 0 && test_fraction > 0, "split fractions must be positive");
    require(valid_fraction + test_fraction < 1, "split fractions must sum to less than 1");
    std::vector<Interaction> xs = corpus.interactions();
    std::sort(xs.begin(), xs.end(), chronological_less);
    const std::size_t n = xs.size();
    // The epsilon keeps 10 * 0.1 from landing just under 1.
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 1e-9));
    const auto n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * valid_fraction + 1e-9));
    if (n_test == 0) fail(ErrorKind::validation, "corpus of " + std::to_string(n) + " too small: test split empty");
    if (n_valid == 0) fail(ErrorKind::validation, "corpus of " + std::to_string(n) + " too small: valid split empty");
    if (n_test + n_valid >= n)
        fail(ErrorKind::validation, "corpus of " + std::to_string(n) + " too small: train split empty");
    const std::size_t n_train = n - n_valid - n_test;

    std::vector<Interaction> train(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::set<std::string> train_users, train_items;
    for (const auto& x : train) {
        train_users.insert(x.user_id);
        train_items.insert(x.item_id);
    }
    auto warm = [&](std::size_t from, std::size_t to, std::size_t& removed) {
        std::vector<Interaction> out;
        for (std::size_t i = from; i < to; ++i) {
            if (train_users.contains(xs[i].user_id) && train_items.contains(xs[i].item_id))
                out.push_back(xs[i]);
            else
                ++removed;
        }
        return out;
    };
    SplitResult res;
    res.report.input = n;
    auto valid = warm(n_train, n_train + n_valid, res.report.cold_start_valid);
    auto test = warm(n_train + n_valid, n, res.report.cold_start_test);
    res.split.train = Corpus(std::move(train));
    res.split.valid = Corpus(std::move(valid));
    res.split.test = Corpus(std::move(test));
    res.report.train = res.split.train.size();
    res.report.valid = res.split.valid.size();
    res.report.test = res.split.test.size();
    return res;
}

// ---------------------------------------------------------------------------
// Histories

/// H_u and H_i for one target pair, both oldest first.
struct HistoryPair {
    std::vector<Interaction> user_history;
    std::vector<Interaction> item_history;
    std::string target_user;
    std::string target_item;
};

inline constexpr std::size_t kDefaultMaxHistory = 10;

/// Builds H_u and H_i from the training split. When `target_timestamp` is
/// given, only interactions ordered before (timestamp, user, item) of the
/// target are kept, so training targets never see their own future.
/// The target pair itself never appears in either history.
inline HistoryPair build_history(const SplitCorpus& split, const std::string& user, const std::string& item,
                                 std::size_t max_len = kDefaultMaxHistory,
                                 std::optional<std::int64_t> target_timestamp = std::nullopt) {
    require(max_len >= 1, "max_len must be >= 1");
    const Corpus& train = split.train;
    if (!train.has_user(user)) fail(ErrorKind::cold_start, "user '" + user + "' has no training interactions");
    if (!train.has_item(item)) fail(ErrorKind::cold_start, "item '" + item + "' has no training interactions");

    auto before_target = [&](const Interaction& x) {
        if (!target_timestamp) return true;
        return std::tie(x.timestamp, x.user_id, x.item_id) < std::tie(*target_timestamp, user, item);
    };
    auto collect = [&](std::span<const std::size_t> positions) {
        std::vector<Interaction> out;
        for (auto p : positions) {
            const auto& x = train.interactions()[p];
            if (x.user_id == user && x.item_id == item) continue;
            if (before_target(x)) out.push_back(x);
        }
        std::sort(out.begin(), out.end(), chronological_less);
        if (out.size() > max_len) out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(max_len));
        return out;
    };
    HistoryPair h;
    h.target_user = user;
    h.target_item = item;
    h.user_history = collect(train.user_positions(user));
    h.item_history = collect(train.item_positions(item));
    return h;
}

// ---------------------------------------------------------------------------
// Sampling

struct TrainingPairs {
    std::vector<PairKey> instruct;
    std::vector<PairKey> reward;
};

/// Draws two disjoint pair sets without replacement from the distinct
/// (user, item) pairs of the training split. Deterministic in `seed`.
inline TrainingPairs sample_training_pairs(const SplitCorpus& split, std::size_t n_instruct, std::size_t n_reward,
                                           std::uint64_t seed) {
    std::set<PairKey> distinct;
    for (const auto& x : split.train.interactions()) distinct.emplace(x.user_id, x.item_id);
    if (distinct.size() < n_instruct + n_reward)
        fail(ErrorKind::validation, "requested " + std::to_string(n_instruct + n_reward) +
                                        " training pairs but only " + std::to_string(distinct.size()) +
                                        " are available");
    std::vector<PairKey> pool(distinct.begin(), distinct.end());
    std::mt19937_64 rng(seed);
    portable_shuffle(std::span<PairKey>(pool), rng);
    TrainingPairs out;
    out.instruct.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_instruct));
    out.reward.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_instruct),
                      pool.begin() + static_cast<std::ptrdiff_t>(n_instruct + n_reward));
    return out;
}

inline json pairs_to_json(const std::vector<PairKey>& pairs) {
    json arr = json::array();
    for (const auto& [u, i] : pairs) arr.push_back(json::array({u, i}));
    return arr;
}

inline std::vector<PairKey> pairs_from_json(const json& arr) {
    std::vector<PairKey> out;
    for (const auto& p : arr) out.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    return out;
}

} // namespace deliberec
