#include "protoreg/partition.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "protoreg/error.hpp"

namespace protoreg {
namespace {

std::string normalize_name(std::string s) {
    for (auto& ch : s) {
        ch = (ch == ' ' || ch == '-') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return s;
}

template <typename T>
T draw_index(std::mt19937_64& rng, T n) {
    return std::uniform_int_distribution<T>(0, n - 1)(rng);
}

/// Draws min(k, pool.size()) distinct elements, preserving draw order.
std::vector<std::string> draw_distinct(std::vector<std::string> pool, int k, std::mt19937_64& rng) {
    const auto n = std::min<size_t>(static_cast<size_t>(k), pool.size());
    for (size_t i = 0; i < n; ++i) {
        const auto j = i + draw_index<size_t>(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

std::mt19937_64 keyed_rng(uint64_t seed, uint64_t a, uint64_t b) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(a), static_cast<uint32_t>(b)};
    return std::mt19937_64(seq);
}

void write_list(std::ostream& out, const std::string& key, const std::vector<std::string>& xs) {
    out << key;
    for (const auto& x : xs) out << '\t' << x;
    out << '\n';
}

}  // namespace

const std::vector<std::vector<std::string>>& pelvic_folds() {
    static const std::vector<std::vector<std::string>> folds = {
        {"bladder", "central_gland"},
        {"bone", "rectum"},
        {"obturator_internus", "seminal_vesicle"},
        {"transition_zone", "neurovascular_bundle"},
    };
    return folds;
}

std::vector<std::vector<int>> resolve_folds(const Catalog& catalog) {
    if (catalog.folds()) return *catalog.folds();
    std::vector<std::vector<int>> out;
    for (const auto& fold : pelvic_folds()) {
        std::vector<int> ids;
        for (const auto& name : fold) {
            auto it = std::find_if(catalog.classes().begin(), catalog.classes().end(),
                                   [&](const ClassInfo& c) { return normalize_name(c.name) == name; });
            if (it == catalog.classes().end()) {
                throw ConfigError("catalog declares no folds and lacks pelvic class '" + name + "'");
            }
            ids.push_back(it->id);
        }
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<std::string> InstitutionSplit::all() const {
    std::vector<std::string> out = train;
    out.insert(out.end(), test.begin(), test.end());
    out.insert(out.end(), validation.begin(), validation.end());
    return out;
}

bool SplitSpec::is_novel_institution(const std::string& u) const {
    return std::find(novel_institutions.begin(), novel_institutions.end(), u) != novel_institutions.end();
}

std::vector<std::string> SplitSpec::train_pool() const {
    std::vector<std::string> out;
    for (const auto& u : base_institutions) {
        const auto& t = institutions.at(u).train;
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

std::vector<std::string> SplitSpec::validation_ids() const {
    std::vector<std::string> out;
    for (const auto& u : base_institutions) {
        const auto& v = institutions.at(u).validation;
        out.insert(out.end(), v.begin(), v.end());
    }
    for (const auto& u : novel_institutions) {
        const auto& v = institutions.at(u).validation;
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

const std::string& SplitSpec::institution_of(const std::string& id) const {
    for (const auto& [u, s] : institutions) {
        for (const auto* list : {&s.train, &s.test, &s.validation}) {
            if (std::find(list->begin(), list->end(), id) != list->end()) return u;
        }
    }
    throw ConfigError("image '" + id + "' is not part of the split");
}

void SplitSpec::validate() const {
    for (int c : base_classes) {
        if (std::find(novel_classes.begin(), novel_classes.end(), c) != novel_classes.end()) {
            throw ConfigError("class " + std::to_string(c) + " is both base and novel");
        }
    }
    for (const auto& u : base_institutions) {
        if (is_novel_institution(u)) throw ConfigError("institution '" + u + "' is both base and novel");
    }
    if (novel_classes.empty() || base_classes.empty()) throw ConfigError("split needs base and novel classes");
    std::set<std::string> seen;
    for (const auto& [u, s] : institutions) {
        if (is_novel_institution(u) && !s.train.empty()) {
            throw ConfigError("novel institution '" + u + "' must not hold training images");
        }
        for (const auto& id : s.all()) {
            if (!seen.insert(id).second) throw ConfigError("image '" + id + "' has more than one role");
        }
    }
}

void SplitSpec::write_manifest(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write split manifest " + path.string());
    out << to_text();
    if (!out) throw IoError("failed writing " + path.string());
}

std::string SplitSpec::to_text() const {
    std::ostringstream out;
    auto ints = [](const std::vector<int>& xs) {
        std::vector<std::string> s;
        for (int x : xs) s.push_back(std::to_string(x));
        return s;
    };
    write_list(out, "base_classes", ints(base_classes));
    write_list(out, "novel_classes", ints(novel_classes));
    write_list(out, "base_institutions", base_institutions);
    write_list(out, "novel_institutions", novel_institutions);
    for (const auto& [u, s] : institutions) {
        write_list(out, "train\t" + u, s.train);
        write_list(out, "test\t" + u, s.test);
        write_list(out, "validation\t" + u, s.validation);
    }
    return out.str();
}

SplitSpec SplitSpec::read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split manifest " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return from_text(text.str());
}

SplitSpec SplitSpec::from_text(const std::string& text) {
    std::istringstream in(text);
    SplitSpec s;
    for (std::string line; std::getline(in, line);) {
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        const std::vector<std::string> rest(tok.begin() + 1, tok.end());
        if (tok[0] == "base_classes" || tok[0] == "novel_classes") {
            auto& dst = tok[0] == "base_classes" ? s.base_classes : s.novel_classes;
            for (const auto& t : rest) dst.push_back(std::stoi(t));
        } else if (tok[0] == "base_institutions") {
            s.base_institutions = rest;
        } else if (tok[0] == "novel_institutions") {
            s.novel_institutions = rest;
        } else if ((tok[0] == "train" || tok[0] == "test" || tok[0] == "validation") && tok.size() >= 2) {
            auto& is = s.institutions[tok[1]];
            auto& dst = tok[0] == "train" ? is.train : tok[0] == "test" ? is.test : is.validation;
            dst.assign(tok.begin() + 2, tok.end());
        } else {
            throw IoError("bad split manifest line: " + line);
        }
    }
    s.validate();
    return s;
}

SplitSpec make_split(const Catalog& catalog, int fold_index, const std::string& novel_institution,
                     uint64_t seed) {
    const auto folds = resolve_folds(catalog);
    if (fold_index < 1 || fold_index > static_cast<int>(folds.size())) {
        throw ConfigError("fold index " + std::to_string(fold_index) + " outside 1.." +
                          std::to_string(folds.size()));
    }
    if (!catalog.has_institution(novel_institution)) {
        throw ConfigError("unknown novel institution '" + novel_institution + "'");
    }

    SplitSpec split;
    split.novel_classes = folds[static_cast<size_t>(fold_index - 1)];
    for (int c : catalog.class_ids()) {
        if (std::find(split.novel_classes.begin(), split.novel_classes.end(), c) == split.novel_classes.end()) {
            split.base_classes.push_back(c);
        }
    }
    std::mt19937_64 rng(seed);
    for (const auto& u : catalog.institutions()) {
        auto ids = catalog.ids_of(u);
        if (ids.size() < 3) {
            throw ConfigError("institution '" + u + "' has " + std::to_string(ids.size()) +
                              " images; at least 3 are required");
        }
        std::sort(ids.begin(), ids.end());
        std::shuffle(ids.begin(), ids.end(), rng);

        InstitutionSplit is;
        std::vector<std::string> novel_pool;
        if (u == novel_institution) {
            split.novel_institutions.push_back(u);
            novel_pool = ids;
        } else {
            split.base_institutions.push_back(u);
            const auto n = ids.size();
            const auto n_test = std::max<size_t>(1, (n + 2) / 4);
            is.train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_test));
            novel_pool.assign(ids.end() - static_cast<std::ptrdiff_t>(n_test), ids.end());
        }
        const auto n_val = std::min<size_t>(2, novel_pool.size() - 1);
        is.validation.assign(novel_pool.begin(), novel_pool.begin() + static_cast<std::ptrdiff_t>(n_val));
        is.test.assign(novel_pool.begin() + static_cast<std::ptrdiff_t>(n_val), novel_pool.end());
        split.institutions.emplace(u, std::move(is));
    }
    split.validate();
    return split;
}

Episode sample_train_episode(const SplitSpec& split, std::mt19937_64& rng) {
    const auto pool = split.train_pool();
    if (pool.size() < 2) throw ConfigError("training pool needs at least 2 images");
    if (split.base_classes.empty()) throw ConfigError("no base classes to sample");
    Episode ep;
    ep.class_id = split.base_classes[draw_index<size_t>(rng, split.base_classes.size())];
    const auto q = draw_index<size_t>(rng, pool.size());
    auto s = draw_index<size_t>(rng, pool.size() - 1);
    if (s >= q) ++s;
    ep.query = pool[q];
    ep.supports = {pool[s]};
    ep.query_institution = split.institution_of(ep.query);
    ep.support_institution = split.institution_of(pool[s]);
    ep.id = "train_" + ep.query + "_" + pool[s] + "_c" + std::to_string(ep.class_id);
    return ep;
}

std::vector<Episode> enumerate_eval_episodes(const SplitSpec& split, int shots, uint64_t seed) {
    if (shots < 1) throw ConfigError("shot count must be >= 1");
    std::vector<std::string> support_institutions = split.novel_institutions;
    support_institutions.insert(support_institutions.end(), split.base_institutions.begin(),
                                split.base_institutions.end());
    std::vector<Episode> out;
    uint64_t query_index = 0;
    for (const auto& qu : split.novel_institutions) {
        for (const auto& q : split.institutions.at(qu).test) {
            for (size_t ui = 0; ui < support_institutions.size(); ++ui) {
                const auto& su = support_institutions[ui];
                const bool novel = split.is_novel_institution(su);
                std::vector<std::string> pool =
                    novel ? split.institutions.at(su).all() : split.institutions.at(su).test;
                pool.erase(std::remove(pool.begin(), pool.end(), q), pool.end());
                if (pool.empty()) {
                    throw ConfigError("empty support pool in institution '" + su + "' for query '" + q + "'");
                }
                auto rng = keyed_rng(seed, query_index, ui);
                const auto supports = draw_distinct(std::move(pool), shots, rng);
                for (int c : split.novel_classes) {
                    Episode ep;
                    ep.query = q;
                    ep.query_institution = qu;
                    ep.supports = supports;
                    ep.support_institution = su;
                    ep.class_id = c;
                    ep.support_from_novel = novel;
                    ep.id = q + "|" + su + "|c" + std::to_string(c);
                    out.push_back(std::move(ep));
                }
            }
            ++query_index;
        }
    }
    return out;
}

std::vector<Episode> validation_episodes(const SplitSpec& split, uint64_t seed) {
    std::vector<Episode> out;
    uint64_t query_index = 0;
    for (const auto& q : split.validation_ids()) {
        const auto& qu = split.institution_of(q);
        for (size_t ui = 0; ui < split.novel_institutions.size(); ++ui) {
            const auto& su = split.novel_institutions[ui];
            auto pool = split.institutions.at(su).all();
            pool.erase(std::remove(pool.begin(), pool.end(), q), pool.end());
            if (pool.empty()) throw ConfigError("empty validation support pool in '" + su + "'");
            auto rng = keyed_rng(seed ^ 0x9e3779b97f4a7c15ULL, query_index, ui);
            const auto supports = draw_distinct(std::move(pool), 1, rng);
            for (int c : split.novel_classes) {
                Episode ep;
                ep.query = q;
                ep.query_institution = qu;
                ep.supports = supports;
                ep.support_institution = su;
                ep.class_id = c;
                ep.support_from_novel = true;
                ep.id = "val|" + q + "|" + su + "|c" + std::to_string(c);
                out.push_back(std::move(ep));
            }
        }
        ++query_index;
    }
    return out;
}

}  // namespace protoreg
