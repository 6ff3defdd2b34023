#include "hfkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <zlib.h>

#include "hfkit/translator.hpp"

namespace hfkit {

using nlohmann::json;

namespace {

const json* extra_field(const StandardizedFeedback& fb, const char* object, const char* key) {
    const auto& extra = fb.meta.extra;
    if (!extra.is_object()) return nullptr;
    if (object != nullptr) {
        auto it = extra.find(object);
        if (it == extra.end() || !it->is_object()) return nullptr;
        auto inner = it->find(key);
        return inner == it->end() ? nullptr : &*inner;
    }
    auto it = extra.find(key);
    return it == extra.end() ? nullptr : &*it;
}

std::string scalar_text(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    return j.dump();
}

// Identity of a target independent of when it was shown.
std::string target_key(const Target& t) {
    return std::visit(
        [](const auto& ref) -> std::string {
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, EpisodeTarget>) return "episode:" + ref.ref.key();
            else if constexpr (std::is_same_v<T, StateTarget>) return "state:" + ref.ref.key() + "@" + std::to_string(ref.step);
            else if constexpr (std::is_same_v<T, SegmentTarget>)
                return "segment:" + ref.ref.key() + "@" + std::to_string(ref.start) + "-" + std::to_string(ref.end);
            else return "all";
        },
        t.ref);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

std::string fixed(double v, int precision = 4) {
    if (!std::isfinite(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Logs

std::uint32_t crc32_of(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::uint32_t config_hash(const ExperimentConfig& config) { return crc32_of(to_json(config).dump()); }

LogSnapshot parse_log(std::string_view text) {
    LogSnapshot out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) break;
        try {
            out.records.push_back(parse_feedback(text.substr(pos, nl - pos)));
        } catch (const ParseError& e) {
            throw ParseError(pos + e.position(), e.reason());
        } catch (const Error& e) {
            throw ParseError(pos, e.what());
        }
        pos = nl + 1;
    }
    out.bytes = pos;
    out.crc32 = crc32_of(text.substr(0, pos));
    return out;
}

LogSnapshot read_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("no log at " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_log(ss.str());
}

std::optional<FeedbackKind> feedback_kind_of(const StandardizedFeedback& fb) {
    const auto& tag = fb.type_tag;
    if (tag.relation == Relation::relative && std::holds_alternative<Ranking>(fb.content)) return FeedbackKind::comparative;
    switch (tag.intention) {
        case Intention::evaluate:
            if (std::holds_alternative<Evaluation>(fb.content)) return FeedbackKind::evaluative;
            return std::nullopt;
        case Intention::instruct:
            if (!std::holds_alternative<Instruction>(fb.content)) return std::nullopt;
            return tag.actuality == Actuality::generated ? FeedbackKind::demonstrative : FeedbackKind::corrective;
        case Intention::describe:
            if (std::holds_alternative<Description>(fb.content)) return FeedbackKind::descriptive;
            return std::nullopt;
        case Intention::none: return std::nullopt;
    }
    return std::nullopt;
}

bool is_calibration(const StandardizedFeedback& fb) {
    if (const auto* v = extra_field(fb, "service", "calibration"); v != nullptr && v->is_boolean()) return v->get<bool>();
    if (const auto* v = extra_field(fb, nullptr, "calibration"); v != nullptr && v->is_boolean()) return v->get<bool>();
    return false;
}

ChoiceContext record_context(const StandardizedFeedback& fb) {
    ChoiceContext ctx;
    const auto kind = feedback_kind_of(fb);
    ctx["type"] = kind ? std::string(to_string(*kind)) : "other";
    ctx["task"] = "all";
    for (const auto& t : fb.targets)
        if (const auto* id = t.episode()) {
            ctx["task"] = id->env_name;
            break;
        }
    ctx["progress"] = "0";
    if (const auto* p = extra_field(fb, "service", "phase")) ctx["progress"] = scalar_text(*p);
    else if (const auto* q = extra_field(fb, nullptr, "phase")) ctx["progress"] = scalar_text(*q);
    if (const auto* over = extra_field(fb, nullptr, "context"); over != nullptr && over->is_object())
        for (const auto& [key, value] : over->items())
            if (key == "type" || key == "task" || key == "progress") ctx[key] = scalar_text(value);
    return ctx;
}

// ---------------------------------------------------------------------------
// Statistics

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw LengthMismatch("spearman inputs differ in length");
    if (a.size() < 2) return 0.0;
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double target_return(const Target& target, const EpisodeCatalog& episodes) {
    return std::visit(
        [&](const auto& ref) -> double {
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, AllTarget>) {
                throw UnknownTargets("the whole task has no return");
            } else {
                if (!episodes.contains(ref.ref)) throw UnknownTargets("unknown episode " + ref.ref.key());
                if constexpr (std::is_same_v<T, EpisodeTarget>) {
                    return episodes.fetch(ref.ref).total_return;
                } else if constexpr (std::is_same_v<T, StateTarget>) {
                    const auto ep = episodes.fetch(ref.ref);
                    if (ref.step < 0 || ref.step >= ep.length()) throw RangeError("state target outside the episode");
                    return ep.gt_rewards[static_cast<std::size_t>(ref.step)];
                } else {
                    return episodes.slice(ref.ref, ref.start, ref.end).gt_return();
                }
            }
        },
        target.ref);
}

// ---------------------------------------------------------------------------
// Rationality

std::vector<ChoiceObservation> choice_observations(const std::vector<StandardizedFeedback>& records,
                                                   const EpisodeCatalog& episodes, bool calibration_only) {
    std::vector<ChoiceObservation> out;
    for (const auto& fb : records) {
        if (feedback_kind_of(fb) != FeedbackKind::comparative) continue;
        if (calibration_only && !is_calibration(fb)) continue;
        const auto& ranks = std::get<Ranking>(fb.content).ranks;
        if (ranks.size() != fb.targets.size()) continue;
        std::vector<double> u;
        for (const auto& t : fb.targets) u.push_back(target_return(t, episodes));
        const auto ctx = record_context(fb);

        std::vector<std::size_t> remaining(ranks.size());
        std::iota(remaining.begin(), remaining.end(), 0);
        while (remaining.size() > 1) {
            int best = ranks[remaining.front()];
            for (auto i : remaining) best = std::min(best, ranks[i]);
            std::vector<std::size_t> winners;
            for (auto i : remaining)
                if (ranks[i] == best) winners.push_back(i);
            if (winners.size() == 1) {
                ChoiceObservation o;
                for (std::size_t j = 0; j < remaining.size(); ++j) {
                    o.utilities.push_back(u[remaining[j]]);
                    if (remaining[j] == winners.front()) o.chosen = static_cast<int>(j);
                }
                o.context = ctx;
                o.user_id = fb.meta.user_id;
                out.push_back(std::move(o));
            }
            std::erase_if(remaining, [&](std::size_t i) { return ranks[i] == best; });
        }
    }
    return out;
}

std::string slice_label(const ChoiceContext& slice) {
    std::string out;
    for (const auto& [k, v] : slice) {
        if (!out.empty()) out += ",";
        out += k + "=" + v;
    }
    return out;
}

BetaReport beta_report(const std::vector<ChoiceObservation>& observations) {
    if (observations.empty()) throw NoCalibrationData("no comparative calibration choices");
    std::map<ChoiceContext, std::vector<ChoiceObservation>> by_slice;
    for (const auto& o : observations) by_slice[o.context].push_back(o);

    BetaReport report;
    report.n_obs = static_cast<std::int64_t>(observations.size());
    for (const auto& [slice, obs] : by_slice) {
        try {
            auto est = fit_beta(obs);
            est.slice = slice;
            report.slices.push_back({slice, est});
        } catch (const Error& e) {
            report.skipped[slice_label(slice)] = e.code() + ": " + e.what();
        }
    }
    if (report.slices.empty()) {
        report.decomposition_error = "no slice could be fitted";
        return report;
    }

    std::vector<std::string> deps;
    for (const char* d : {"type", "task", "progress"}) {
        std::set<std::string> values;
        for (const auto& s : report.slices) values.insert(s.slice.at(d));
        if (values.size() > 1) deps.push_back(d);
    }
    if (deps.empty()) deps.push_back("type");
    try {
        report.decomposition = decompose_beta(report.slices, deps);
    } catch (const Error& e) {
        report.decomposition_error = e.code() + ": " + e.what();
    }
    return report;
}

BetaReport beta_report(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes) {
    return beta_report(choice_observations(records, episodes, true));
}

json to_json(const RationalityEstimate& e) {
    return {{"beta_hat", e.beta_hat},
            {"stderr", std::isfinite(e.stderr_) ? json(e.stderr_) : json(nullptr)},
            {"n_obs", e.n_obs},
            {"saturated", e.saturated},
            {"normalization", to_string(e.normalization)},
            {"slice", e.slice}};
}

json to_json(const BetaReport& r) {
    json slices = json::array();
    for (const auto& s : r.slices) slices.push_back(to_json(s.estimate));
    json out = {{"n_obs", r.n_obs}, {"slices", slices}, {"skipped", r.skipped}};
    if (r.decomposition) {
        const auto& d = *r.decomposition;
        out["decomposition"] = {{"dependencies", d.dependencies},
                                {"alpha", d.alpha},
                                {"beta_d", d.beta_d},
                                {"marginal", d.marginal},
                                {"grand_mean", d.grand_mean}};
    } else {
        out["decomposition"] = nullptr;
        out["decomposition_error"] = r.decomposition_error;
    }
    return out;
}

std::string format_table(const BetaReport& r) {
    std::ostringstream os;
    os << "beta per slice (" << r.n_obs << " choices)\n";
    os << pad("slice", 52) << pad("beta_hat", 12) << pad("stderr", 12) << "n\n";
    for (const auto& s : r.slices)
        os << pad(slice_label(s.slice), 52) << pad(fixed(s.estimate.beta_hat), 12) << pad(fixed(s.estimate.stderr_), 12)
           << s.estimate.n_obs << (s.estimate.saturated ? " (saturated)" : "") << "\n";
    for (const auto& [label, reason] : r.skipped) os << pad(label, 52) << "skipped: " << reason << "\n";
    if (r.decomposition) {
        const auto& d = *r.decomposition;
        os << "\ndecomposition (grand mean " << fixed(d.grand_mean) << ")\n";
        os << pad("dependency", 14) << pad("value", 24) << pad("alpha", 10) << pad("marginal", 12) << "beta_d\n";
        for (const auto& dep : d.dependencies)
            for (const auto& [value, beta] : d.beta_d.at(dep))
                os << pad(dep, 14) << pad(value, 24) << pad(fixed(d.alpha.at(dep), 3), 10)
                   << pad(fixed(d.marginal.at(dep).at(value)), 12) << fixed(beta) << "\n";
    } else {
        os << "\ndecomposition unavailable: " << r.decomposition_error << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Consistency

std::vector<RepeatSet> repeat_sets(const std::vector<StandardizedFeedback>& records) {
    std::map<std::string, RepeatSet> sets;
    for (const auto& fb : records) {
        const auto kind = feedback_kind_of(fb);
        if (kind == FeedbackKind::evaluative && fb.targets.size() == 1) {
            const auto& e = std::get<Evaluation>(fb.content);
            if (!e.features.empty()) continue;
            const auto key = "rating " + target_key(fb.targets.front());
            auto& set = sets[key];
            set.key = key;
            set.kind = RepeatSet::Kind::evaluative;
            set.values.push_back(e.score);
        } else if (kind == FeedbackKind::comparative) {
            for (const auto& p : expand_ranking(fb)) {
                const auto w = target_key(p.winner), l = target_key(p.loser);
                const auto key = "pair " + std::min(w, l) + " | " + std::max(w, l);
                auto& set = sets[key];
                set.key = key;
                set.kind = RepeatSet::Kind::comparative;
                set.values.push_back(w < l ? 1.0 : -1.0);
            }
        }
    }
    std::vector<RepeatSet> out;
    for (auto& [_, set] : sets)
        if (set.values.size() >= 2) out.push_back(std::move(set));
    return out;
}

std::vector<UserConsistency> consistency_table(const std::vector<StandardizedFeedback>& records) {
    std::map<std::string, std::vector<StandardizedFeedback>> by_user;
    for (const auto& fb : records) by_user[fb.meta.user_id].push_back(fb);
    std::vector<UserConsistency> out;
    for (const auto& [user, recs] : by_user) {
        const auto sets = repeat_sets(recs);
        if (sets.empty()) continue;
        UserConsistency row;
        row.user_id = user;
        row.repeat_sets = static_cast<std::int64_t>(sets.size());
        std::vector<RepeatSet> eval, comp;
        for (const auto& s : sets) (s.kind == RepeatSet::Kind::evaluative ? eval : comp).push_back(s);
        if (!eval.empty()) row.evaluative = consistency_score(eval);
        if (!comp.empty()) row.comparative = consistency_score(comp);
        out.push_back(std::move(row));
    }
    return out;
}

json to_json(const std::vector<UserConsistency>& table) {
    json out = json::array();
    for (const auto& row : table)
        out.push_back({{"user_id", row.user_id},
                       {"evaluative", optional_number(row.evaluative)},
                       {"comparative", optional_number(row.comparative)},
                       {"repeat_sets", row.repeat_sets}});
    return out;
}

std::string format_table(const std::vector<UserConsistency>& table) {
    std::ostringstream os;
    os << pad("user", 28) << pad("evaluative", 14) << pad("comparative", 14) << "repeat sets\n";
    for (const auto& row : table)
        os << pad(row.user_id, 28) << pad(row.evaluative ? fixed(*row.evaluative) : "-", 14)
           << pad(row.comparative ? fixed(*row.comparative) : "-", 14) << row.repeat_sets << "\n";
    if (table.empty()) os << "(no repeated feedback)\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Per-session quality

QualityEstimate quality_estimate(const std::vector<StandardizedFeedback>& records, const std::string& session_id,
                                 const EpisodeCatalog& episodes) {
    std::vector<StandardizedFeedback> mine, calibration;
    for (const auto& fb : records) {
        if (fb.meta.session_id != session_id) continue;
        mine.push_back(fb);
        if (is_calibration(fb)) calibration.push_back(fb);
    }
    QualityEstimate q;
    q.calibration_records = static_cast<std::int64_t>(calibration.size());
    const auto sets = repeat_sets(mine);
    q.repeat_sets = static_cast<std::int64_t>(sets.size());
    if (calibration.empty() && sets.empty())
        throw InsufficientData("session " + session_id + " has no calibration or repeated feedback");

    if (!sets.empty()) q.consistency = consistency_score(sets);

    std::vector<double> given, truth;
    for (const auto& fb : calibration) {
        if (feedback_kind_of(fb) != FeedbackKind::evaluative || fb.targets.size() != 1) continue;
        given.push_back(std::get<Evaluation>(fb.content).score);
        truth.push_back(target_return(fb.targets.front(), episodes));
    }
    if (given.size() >= 3) q.correlation = spearman(given, truth);

    const auto obs = choice_observations(calibration, episodes, true);
    try {
        q.beta = fit_beta(obs);
    } catch (const TooFewObservations&) {
    } catch (const Degenerate&) {
    }
    return q;
}

json to_json(const QualityEstimate& q) {
    return {{"correlation", optional_number(q.correlation)},
            {"beta", q.beta ? to_json(*q.beta) : json(nullptr)},
            {"consistency", optional_number(q.consistency)},
            {"calibration_records", q.calibration_records},
            {"repeat_sets", q.repeat_sets}};
}

// ---------------------------------------------------------------------------
// Reward-model evaluation

ModelEvaluation evaluate_cell_rewards(const Eigen::VectorXd& cell_rewards, const GridSpec& spec) {
    const auto truth = value_iteration(spec);
    const auto learned = value_iteration(spec, cell_rewards);
    std::vector<double> v_star, v_hat, r_hat;
    for (const Cell c : spec.floor_cells()) {
        v_star.push_back(truth.v(spec, c));
        v_hat.push_back(learned.v(spec, c));
        r_hat.push_back(cell_rewards(spec.index(c)));
    }
    ModelEvaluation m;
    m.cells = v_star.size();
    m.value_spearman = spearman(v_hat, v_star);
    m.reward_spearman = spearman(r_hat, v_star);
    m.optimal_return = greedy_return(spec, truth);
    m.learned_return = greedy_return(spec, learned);
    m.return_ratio = m.optimal_return != 0.0 ? m.learned_return / m.optimal_return : 0.0;
    return m;
}

ModelEvaluation evaluate_model(const RewardModel& model, const GridSpec& spec) {
    if (model.features.width != spec.width || model.features.height != spec.height)
        throw LengthMismatch("model grid does not match the environment");
    return evaluate_cell_rewards(predict_cells(model, model.features.matrix(spec)), spec);
}

json to_json(const ModelEvaluation& m) {
    return {{"value_spearman", m.value_spearman},
            {"reward_spearman", m.reward_spearman},
            {"learned_return", m.learned_return},
            {"optimal_return", m.optimal_return},
            {"return_ratio", m.return_ratio},
            {"cells", m.cells}};
}

std::string format_table(const ModelEvaluation& m) {
    std::ostringstream os;
    os << pad("spearman(V_hat, V*)", 28) << fixed(m.value_spearman) << "\n"
       << pad("spearman(r_hat, V*)", 28) << fixed(m.reward_spearman) << "\n"
       << pad("learned policy return", 28) << fixed(m.learned_return) << "\n"
       << pad("optimal return", 28) << fixed(m.optimal_return) << "\n"
       << pad("return ratio", 28) << fixed(m.return_ratio) << "\n"
       << pad("floor cells", 28) << m.cells << "\n";
    return os.str();
}

std::map<std::string, std::int64_t> feedback_counts(const std::vector<StandardizedFeedback>& records) {
    std::map<std::string, std::int64_t> out;
    for (const auto& fb : records) {
        const auto kind = feedback_kind_of(fb);
        ++out[kind ? std::string(to_string(*kind)) : "other"];
    }
    return out;
}

}  // namespace hfkit
