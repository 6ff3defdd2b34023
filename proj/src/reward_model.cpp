#include "hfkit/reward_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "hfkit/translator.hpp"

namespace hfkit {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoints are written in native little-endian order");

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double sum_at(const Eigen::VectorXd& r, const std::vector<int>& cells) {
    double s = 0.0;
    for (int c : cells) s += r(c);
    return s;
}

void add_at(Eigen::VectorXd& g, const std::vector<int>& cells, double v) {
    for (int c : cells) g(c) += v;
}

// Per-item losses; each adds scale * d(item loss)/dr into g.
double item_loss(const Eigen::VectorXd& r, const EvaluativeItem& it, Eigen::VectorXd* g, double scale) {
    const double n = static_cast<double>(it.cells.size());
    const double e = sum_at(r, it.cells) / n - it.score;
    if (g) add_at(*g, it.cells, scale * 2.0 * e / n);
    return e * e;
}

double item_loss(const Eigen::VectorXd& r, const PreferenceItem& it, Eigen::VectorXd* g, double scale) {
    const double delta = sum_at(r, it.winner) - sum_at(r, it.loser);
    if (g) {
        const double d = -sigmoid(-delta) * scale;
        add_at(*g, it.winner, d);
        add_at(*g, it.loser, -d);
    }
    return softplus(-delta);
}

double item_loss(const Eigen::VectorXd& r, const DemonstrationItem& it, Eigen::VectorXd* g, double scale) {
    const double n = static_cast<double>(it.cells.size());
    double acc = 0.0;
    for (int c : it.cells) {
        const double e = r(c) - 1.0;
        acc += e * e;
        if (g) (*g)(c) += scale * it.optimality * 2.0 * e / n;
    }
    return it.optimality * acc / n;
}

double item_loss(const Eigen::VectorXd& r, const DescriptiveItem& it, Eigen::VectorXd* g, double scale, double margin) {
    const double v = margin - it.importance * (r(it.on) - r(it.baseline));
    if (v <= 0.0) return 0.0;
    if (g) {
        (*g)(it.on) -= scale * it.importance;
        (*g)(it.baseline) += scale * it.importance;
    }
    return v;
}

template <typename Item, typename... Extra>
CellLoss mean_loss(const Eigen::VectorXd& r, const std::vector<Item>& items, const std::vector<std::size_t>* subset,
                   Extra... extra) {
    CellLoss out{0.0, Eigen::VectorXd::Zero(r.size())};
    const std::size_t n = subset ? subset->size() : items.size();
    if (n == 0) return out;
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& it = items[subset ? (*subset)[k] : k];
        out.value += item_loss(r, it, &out.grad, scale, extra...);
    }
    out.value *= scale;
    return out;
}

CellLoss instructive_loss(const Eigen::VectorXd& r, const InstructiveItems& items, const std::vector<std::size_t>* subset) {
    CellLoss out{0.0, Eigen::VectorXd::Zero(r.size())};
    const std::size_t nd = items.demonstrations.size();
    const std::size_t n = subset ? subset->size() : nd + items.corrections.size();
    if (n == 0) return out;
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = subset ? (*subset)[k] : k;
        out.value += i < nd ? item_loss(r, items.demonstrations[i], &out.grad, scale)
                            : item_loss(r, items.corrections[i - nd], &out.grad, scale);
    }
    out.value *= scale;
    return out;
}

std::vector<int> cells_of(const std::vector<Observation>& states, const GridSpec& spec) {
    std::vector<int> out;
    for (std::size_t i = 1; i < states.size(); ++i) out.push_back(spec.index(states[i].agent));
    return out;
}

std::vector<int> mask_cells(const std::vector<MaskCell>& mask, const GridSpec& spec) {
    std::vector<int> out;
    for (const auto& m : mask) {
        if (!spec.in_bounds(m.cell)) throw RangeError("mask cell outside the grid");
        out.push_back(spec.index(m.cell));
    }
    return out;
}

std::set<EpisodeId> touched(const std::vector<Target>& targets) {
    std::set<EpisodeId> out;
    for (const auto& t : targets)
        if (const auto* id = t.episode()) out.insert(*id);
    return out;
}

std::vector<std::size_t> draw_subset(std::size_t n, int batch, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (batch <= 0 || static_cast<std::size_t>(batch) >= n) return idx;
    for (std::size_t i = 0; i < static_cast<std::size_t>(batch); ++i) {
        const std::size_t span = n - i;
        const auto j = i + std::min(span - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(batch));
    return idx;
}

struct Segments {
    Eigen::Map<const Eigen::MatrixXd> w1;
    Eigen::Map<const Eigen::VectorXd> b1;
    Eigen::Map<const Eigen::VectorXd> w2;
    double b2;
};

Segments mlp_view(const RewardModel& m) {
    const Eigen::Index d = m.input_dim(), h = m.hidden;
    const double* p = m.params.data();
    return {Eigen::Map<const Eigen::MatrixXd>(p, h, d), Eigen::Map<const Eigen::VectorXd>(p + d * h, h),
            Eigen::Map<const Eigen::VectorXd>(p + d * h + h, h), p[d * h + 2 * h]};
}

void check_shape(const RewardModel& m, const Eigen::MatrixXd& phi) {
    if (phi.cols() != m.input_dim()) throw LengthMismatch("feature matrix width does not match the model");
    if (m.params.size() != RewardModel::param_count(m.kind, m.input_dim(), m.hidden))
        throw LengthMismatch("parameter vector has the wrong length");
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CorruptRecord("truncated checkpoint");
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(FeatureMap::Kind k) {
    return k == FeatureMap::Kind::onehot_cell ? "onehot_cell" : "cell_plus_local_window";
}

std::string_view to_string(RewardModel::Kind k) { return k == RewardModel::Kind::linear ? "linear" : "mlp"; }

int FeatureMap::dimension() const {
    const int cells = width * height;
    if (kind == Kind::onehot_cell) return cells;
    const int side = 2 * radius + 1;
    return cells + 3 * side * side;
}

Eigen::MatrixXd FeatureMap::matrix(const GridSpec& spec) const {
    if (spec.width != width || spec.height != height) throw LengthMismatch("feature map does not match the grid");
    const int n = spec.cell_count();
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, dimension());
    for (int i = 0; i < n; ++i) phi(i, i) = 1.0;
    if (kind == Kind::cell_plus_local_window) {
        const int side = 2 * radius + 1;
        for (int i = 0; i < n; ++i) {
            const Cell c = spec.cell_at(i);
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    const Cell o{c.x + dx, c.y + dy};
                    const int base = n + 3 * ((dy + radius) * side + (dx + radius));
                    phi(i, base + 0) = spec.is_wall(o) ? 1.0 : 0.0;
                    phi(i, base + 1) = spec.in_bounds(o) && spec.is_lava(o) ? 1.0 : 0.0;
                    phi(i, base + 2) = spec.in_bounds(o) && spec.is_goal(o) ? 1.0 : 0.0;
                }
            }
        }
    }
    return phi;
}

RewardModel make_linear_model(const FeatureMap& features) {
    RewardModel m;
    m.kind = RewardModel::Kind::linear;
    m.features = features;
    m.params = Eigen::VectorXd::Zero(features.dimension());
    return m;
}

RewardModel make_mlp_model(const FeatureMap& features, int hidden, std::uint64_t seed) {
    if (hidden < 1) throw RangeError("hidden width must be at least 1");
    RewardModel m;
    m.kind = RewardModel::Kind::mlp;
    m.features = features;
    m.hidden = hidden;
    const int d = features.dimension();
    m.params = Eigen::VectorXd::Zero(RewardModel::param_count(m.kind, d, hidden));
    std::mt19937_64 rng(seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d) * hidden; ++i) m.params(i) = s1 * (2.0 * uniform01(rng) - 1.0);
    for (Eigen::Index i = 0; i < hidden; ++i)
        m.params(static_cast<Eigen::Index>(d) * hidden + hidden + i) = s2 * (2.0 * uniform01(rng) - 1.0);
    return m;
}

Eigen::VectorXd predict_cells(const RewardModel& model, const Eigen::MatrixXd& phi) {
    check_shape(model, phi);
    if (model.kind == RewardModel::Kind::linear) return phi * model.params;
    const auto v = mlp_view(model);
    const Eigen::MatrixXd a = ((phi * v.w1.transpose()).rowwise() + v.b1.transpose()).array().tanh().matrix();
    return (a * v.w2).array() + v.b2;
}

double predict(const RewardModel& model, const GridSpec& spec, Cell c) {
    return predict_cells(model, model.features.matrix(spec))(spec.index(c));
}

Eigen::VectorXd backprop_cells(const RewardModel& model, const Eigen::MatrixXd& phi, const Eigen::VectorXd& g) {
    check_shape(model, phi);
    if (model.kind == RewardModel::Kind::linear) return phi.transpose() * g;
    const auto v = mlp_view(model);
    const Eigen::Index d = model.input_dim(), h = model.hidden;
    const Eigen::MatrixXd a = ((phi * v.w1.transpose()).rowwise() + v.b1.transpose()).array().tanh().matrix();
    Eigen::VectorXd grad(model.params.size());
    const Eigen::MatrixXd dz = ((g * v.w2.transpose()).array() * (1.0 - a.array().square())).matrix();  // n x h
    Eigen::Map<Eigen::MatrixXd>(grad.data(), h, d) = dz.transpose() * phi;
    grad.segment(d * h, h) = dz.colwise().sum().transpose();
    grad.segment(d * h + h, h) = a.transpose() * g;
    grad(d * h + 2 * h) = g.sum();
    return grad;
}

// ---------------------------------------------------------------------------

std::vector<int> target_cells(const Target& target, const EpisodeCatalog& episodes, const GridSpec& spec) {
    return std::visit(
        [&](const auto& ref) -> std::vector<int> {
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, AllTarget>) {
                return {};
            } else {
                const auto ep = episodes.fetch(ref.ref);
                if constexpr (std::is_same_v<T, EpisodeTarget>) {
                    return cells_of(ep.states, spec);
                } else if constexpr (std::is_same_v<T, StateTarget>) {
                    if (ref.step < 0 || ref.step >= ep.length()) throw RangeError("state target outside the episode");
                    return {spec.index(ep.states[static_cast<std::size_t>(ref.step) + 1].agent)};
                } else {
                    return cells_of(make_segment(ep, ref.start, ref.end).states, spec);
                }
            }
        },
        target.ref);
}

int nearest_unmasked_floor(const GridSpec& spec, Cell c, const std::set<Cell>& mask) {
    int best = -1;
    int best_d = std::numeric_limits<int>::max();
    for (const Cell f : spec.floor_cells()) {
        if (mask.contains(f)) continue;
        const int d = std::abs(f.x - c.x) + std::abs(f.y - c.y);
        const int i = spec.index(f);
        if (d < best_d || (d == best_d && i < best)) {
            best_d = d;
            best = i;
        }
    }
    if (best < 0) throw Degenerate("every floor cell is masked");
    return best;
}

std::vector<EvaluativeItem> evaluative_items(const std::vector<StandardizedFeedback>& records,
                                             const EpisodeCatalog& episodes, const GridSpec& spec) {
    std::vector<EvaluativeItem> out;
    for (const auto& fb : records) {
        const auto* e = std::get_if<Evaluation>(&fb.content);
        if (fb.type_tag.intention != Intention::evaluate || fb.type_tag.relation != Relation::absolute || e == nullptr)
            throw WrongKind("evaluative loss needs absolute evaluations");
        EvaluativeItem it;
        it.cells = e->features.empty() ? target_cells(fb.targets.front(), episodes, spec) : mask_cells(e->features, spec);
        if (it.cells.empty()) continue;
        it.score = e->score;
        it.touches = touched(fb.targets);
        out.push_back(std::move(it));
    }
    return out;
}

std::vector<PreferenceItem> comparative_items(const std::vector<StandardizedFeedback>& records,
                                              const EpisodeCatalog& episodes, const GridSpec& spec) {
    std::vector<PreferenceItem> out;
    for (const auto& fb : records) {
        if (fb.type_tag.intention != Intention::evaluate) throw WrongKind("comparative loss needs evaluate rankings");
        std::vector<Preference> pairs;
        try {
            pairs = expand_ranking(fb);
        } catch (const NotRelative& e) {
            throw WrongKind(e.what());
        }
        for (const auto& p : pairs) {
            PreferenceItem it;
            it.winner = target_cells(p.winner, episodes, spec);
            it.loser = target_cells(p.loser, episodes, spec);
            if (it.winner.empty() || it.loser.empty()) continue;
            it.touches = touched({p.winner, p.loser});
            out.push_back(std::move(it));
        }
    }
    return out;
}

InstructiveItems instructive_items(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes,
                                   const GridSpec& spec) {
    InstructiveItems out;
    for (const auto& fb : records) {
        const auto* ins = std::get_if<Instruction>(&fb.content);
        if (fb.type_tag.intention != Intention::instruct || ins == nullptr)
            throw WrongKind("instructive loss needs instruction records");
        if (fb.targets.size() != 1) continue;
        const auto& target = fb.targets.front();
        if (std::holds_alternative<StateTarget>(target.ref) && !ins->actions.empty() && ins->features.empty()) {
            auto pref = correction_to_preference(fb, episodes, spec);
            if (pref.degenerate) continue;
            out.corrections.push_back({cells_of(pref.winner.states, spec), cells_of(pref.loser.states, spec),
                                       touched(fb.targets)});
            continue;
        }
        DemonstrationItem it;
        it.cells = ins->features.empty() ? target_cells(target, episodes, spec) : mask_cells(ins->features, spec);
        if (it.cells.empty()) continue;
        it.optimality = 1.0;
        if (!ins->actions.empty() && ins->actions.front().optimality) it.optimality = *ins->actions.front().optimality;
        it.touches = touched(fb.targets);
        out.demonstrations.push_back(std::move(it));
    }
    return out;
}

std::vector<DescriptiveItem> descriptive_items(const std::vector<StandardizedFeedback>& records, const GridSpec& spec) {
    std::vector<DescriptiveItem> out;
    for (const auto& fb : records) {
        const auto* d = std::get_if<Description>(&fb.content);
        if (fb.type_tag.content_level != ContentLevel::feature || d == nullptr)
            throw WrongKind("descriptive loss needs feature-level descriptions");
        std::set<Cell> mask;
        for (const auto& m : d->mask) mask.insert(m.cell);
        for (const auto& m : d->mask) {
            if (m.weight == 0.0) continue;
            if (!spec.in_bounds(m.cell)) throw RangeError("mask cell outside the grid");
            out.push_back({spec.index(m.cell), nearest_unmasked_floor(spec, m.cell, mask), d->importance * m.weight,
                           touched(fb.targets)});
        }
    }
    return out;
}

TrainingSet assemble_training_set(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes,
                                  const GridSpec& spec) {
    std::vector<StandardizedFeedback> eval, comp, instr, desc;
    TrainingSet out;
    for (const auto& fb : records) {
        const auto& tag = fb.type_tag;
        if (tag.intention == Intention::evaluate && std::holds_alternative<Evaluation>(fb.content) &&
            tag.relation == Relation::absolute)
            eval.push_back(fb);
        else if (tag.intention == Intention::evaluate && std::holds_alternative<Ranking>(fb.content))
            comp.push_back(fb);
        else if (tag.intention == Intention::instruct && std::holds_alternative<Instruction>(fb.content))
            instr.push_back(fb);
        else if (tag.intention == Intention::describe && tag.content_level == ContentLevel::feature &&
                 std::holds_alternative<Description>(fb.content))
            desc.push_back(fb);
        else
            ++out.skipped;
    }
    out.evaluative = evaluative_items(eval, episodes, spec);
    out.comparative = comparative_items(comp, episodes, spec);
    out.instructive = instructive_items(instr, episodes, spec);
    out.descriptive = descriptive_items(desc, spec);
    return out;
}

// ---------------------------------------------------------------------------

CellLoss loss_evaluative(const Eigen::VectorXd& r, const std::vector<EvaluativeItem>& items) {
    return mean_loss(r, items, nullptr);
}

CellLoss loss_comparative(const Eigen::VectorXd& r, const std::vector<PreferenceItem>& items) {
    return mean_loss(r, items, nullptr);
}

CellLoss loss_instructive(const Eigen::VectorXd& r, const InstructiveItems& items) {
    return instructive_loss(r, items, nullptr);
}

CellLoss loss_descriptive(const Eigen::VectorXd& r, const std::vector<DescriptiveItem>& items, double margin) {
    return mean_loss(r, items, nullptr, margin);
}

ParamLoss to_params(const RewardModel& model, const Eigen::MatrixXd& phi, const CellLoss& loss) {
    return {loss.value, backprop_cells(model, phi, loss.grad)};
}

std::map<std::string, double> evaluate_losses(const RewardModel& model, const TrainingSet& data, const GridSpec& spec,
                                              double margin) {
    const auto r = predict_cells(model, model.features.matrix(spec));
    std::map<std::string, double> out;
    if (!data.evaluative.empty()) out["evaluative"] = loss_evaluative(r, data.evaluative).value;
    if (!data.comparative.empty()) out["comparative"] = loss_comparative(r, data.comparative).value;
    if (!data.instructive.demonstrations.empty() || !data.instructive.corrections.empty())
        out["instructive"] = loss_instructive(r, data.instructive).value;
    if (!data.descriptive.empty()) out["descriptive"] = loss_descriptive(r, data.descriptive, margin).value;
    return out;
}

TrainResult train(const RewardModel& init, const TrainingSet& data, const GridSpec& spec, const LossWeights& weights,
                  const TrainOptions& opts) {
    const std::size_t n_instr = data.instructive.demonstrations.size() + data.instructive.corrections.size();
    const bool use_eval = weights.evaluative > 0 && !data.evaluative.empty();
    const bool use_comp = weights.comparative > 0 && !data.comparative.empty();
    const bool use_instr = weights.instructive > 0 && n_instr > 0;
    const bool use_desc = weights.descriptive > 0 && !data.descriptive.empty();
    if (!(use_eval || use_comp || use_instr || use_desc))
        throw EmptyDataset("no feedback of a type with positive loss weight");
    if (opts.steps < 0 || !(opts.lr > 0.0)) throw RangeError("training needs lr > 0 and steps >= 0");

    const Eigen::MatrixXd phi = init.features.matrix(spec);
    TrainResult out{init, {}};
    RewardModel& model = out.model;
    std::mt19937_64 rng(opts.seed);
    double lr = opts.lr;

    auto full_entry = [&](int step) {
        const auto r = predict_cells(model, phi);
        TrainLogEntry e;
        e.step = step;
        e.lr = lr;
        if (use_eval) e.losses["evaluative"] = loss_evaluative(r, data.evaluative).value;
        if (use_comp) e.losses["comparative"] = loss_comparative(r, data.comparative).value;
        if (use_instr) e.losses["instructive"] = loss_instructive(r, data.instructive).value;
        if (use_desc) e.losses["descriptive"] = loss_descriptive(r, data.descriptive, opts.margin).value;
        e.total = opts.l2 * model.params.squaredNorm();
        if (use_eval) e.total += weights.evaluative * e.losses["evaluative"];
        if (use_comp) e.total += weights.comparative * e.losses["comparative"];
        if (use_instr) e.total += weights.instructive * e.losses["instructive"];
        if (use_desc) e.total += weights.descriptive * e.losses["descriptive"];
        return e;
    };

    out.log.push_back(full_entry(0));
    for (int step = 1; step <= opts.steps; ++step) {
        const auto r = predict_cells(model, phi);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(r.size());
        if (use_eval) {
            const auto idx = draw_subset(data.evaluative.size(), opts.batch, rng);
            g += weights.evaluative * mean_loss(r, data.evaluative, &idx).grad;
        }
        if (use_comp) {
            const auto idx = draw_subset(data.comparative.size(), opts.batch, rng);
            g += weights.comparative * mean_loss(r, data.comparative, &idx).grad;
        }
        if (use_instr) {
            const auto idx = draw_subset(n_instr, opts.batch, rng);
            g += weights.instructive * instructive_loss(r, data.instructive, &idx).grad;
        }
        if (use_desc) {
            const auto idx = draw_subset(data.descriptive.size(), opts.batch, rng);
            g += weights.descriptive * mean_loss(r, data.descriptive, &idx, opts.margin).grad;
        }
        const Eigen::VectorXd grad = backprop_cells(model, phi, g) + 2.0 * opts.l2 * model.params;
        model.params -= lr * grad;

        if (step % opts.log_every == 0 || step == opts.steps) {
            auto entry = full_entry(step);
            if (entry.total > out.log.back().total) {
                lr *= 0.5;
                entry.lr = lr;
            }
            out.log.push_back(std::move(entry));
        }
    }
    return out;
}

json to_json(const TrainLogEntry& e) {
    return {{"step", e.step}, {"losses", e.losses}, {"total", e.total}, {"lr", e.lr}};
}

// ---------------------------------------------------------------------------

double aggregate(const std::vector<RewardModel>& models, const std::vector<double>& weights, const GridSpec& spec, Cell c,
                 AggregateMode mode) {
    if (models.empty() || models.size() != weights.size())
        throw LengthMismatch("aggregate needs one weight per model");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw RangeError("aggregation weights must be non-negative");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw RangeError("aggregation weights must not all be zero");

    const int i = spec.index(c);
    std::vector<double> pred(models.size());
    std::vector<double> z(models.size(), 0.0);
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto r = predict_cells(models[m], models[m].features.matrix(spec));
        pred[m] = r(i);
        if (mode == AggregateMode::voting) {
            const double mean = r.mean();
            const double sd = std::sqrt((r.array() - mean).square().mean());
            z[m] = sd > 0.0 ? (r(i) - mean) / sd : 0.0;
        }
    }
    auto weighted_mean = [&](auto keep) {
        double num = 0.0, den = 0.0;
        for (std::size_t m = 0; m < models.size(); ++m) {
            if (!keep(m)) continue;
            num += weights[m] * pred[m];
            den += weights[m];
        }
        return num / den;
    };
    if (mode == AggregateMode::weighting) return weighted_mean([](std::size_t) { return true; });

    double pos = 0.0, neg = 0.0;
    for (std::size_t m = 0; m < models.size(); ++m) {
        if (z[m] > 0) pos += weights[m];
        else if (z[m] < 0) neg += weights[m];
    }
    if (pos > neg) return weighted_mean([&](std::size_t m) { return z[m] > 0 && weights[m] > 0; });
    if (neg > pos) return weighted_mean([&](std::size_t m) { return z[m] < 0 && weights[m] > 0; });
    return weighted_mean([](std::size_t) { return true; });
}

EpisodeLoss per_episode_loss(const RewardModel& model, const EpisodeId& id, const TrainingSet& data,
                             const EpisodeCatalog& episodes, const GridSpec& spec,
                             const std::vector<RewardModel>& ensemble, double margin) {
    if (!episodes.contains(id)) throw NotFound("episode " + id.key() + " not in any buffer");
    const auto r = predict_cells(model, model.features.matrix(spec));
    double sum = 0.0;
    std::size_t n = 0;
    auto visit = [&](const auto& items, auto&&... extra) {
        for (const auto& it : items) {
            if (!it.touches.contains(id)) continue;
            sum += item_loss(r, it, nullptr, 1.0, extra...);
            ++n;
        }
    };
    visit(data.evaluative);
    visit(data.comparative);
    visit(data.instructive.demonstrations);
    visit(data.instructive.corrections);
    visit(data.descriptive, margin);
    if (n > 0) return {sum / static_cast<double>(n), false};
    if (ensemble.empty()) return {0.0, true};

    const auto cells = cells_of(episodes.fetch(id).states, spec);
    std::vector<double> means;
    for (const auto& m : ensemble) {
        const auto rm = predict_cells(m, m.features.matrix(spec));
        means.push_back(cells.empty() ? 0.0 : sum_at(rm, cells) / static_cast<double>(cells.size()));
    }
    const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    double var = 0.0;
    for (double m : means) var += (m - mu) * (m - mu);
    return {var / static_cast<double>(means.size()), false};
}

// ---------------------------------------------------------------------------

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write("HFRM", 4);
        write_pod(out, std::uint32_t{1});
        write_pod(out, static_cast<std::uint32_t>(model.kind));
        write_pod(out, static_cast<std::uint32_t>(model.features.kind));
        write_pod(out, static_cast<std::int32_t>(model.features.radius));
        write_pod(out, static_cast<std::int32_t>(model.features.width));
        write_pod(out, static_cast<std::int32_t>(model.features.height));
        write_pod(out, static_cast<std::int32_t>(model.hidden));
        write_pod(out, static_cast<std::uint64_t>(model.params.size()));
        out.write(reinterpret_cast<const char*>(model.params.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(model.params.size())));
        if (!out) throw CorruptRecord("failed to write checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

RewardModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("no checkpoint at " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HFRM", 4) != 0) throw CorruptRecord("not a reward model checkpoint");
    if (read_pod<std::uint32_t>(in) != 1) throw SchemaVersionError("unsupported checkpoint version");
    RewardModel m;
    const auto kind = read_pod<std::uint32_t>(in);
    const auto fkind = read_pod<std::uint32_t>(in);
    if (kind > 1 || fkind > 1) throw CorruptRecord("unknown model or feature kind in checkpoint");
    m.kind = static_cast<RewardModel::Kind>(kind);
    m.features.kind = static_cast<FeatureMap::Kind>(fkind);
    m.features.radius = read_pod<std::int32_t>(in);
    m.features.width = read_pod<std::int32_t>(in);
    m.features.height = read_pod<std::int32_t>(in);
    m.hidden = read_pod<std::int32_t>(in);
    const auto count = read_pod<std::uint64_t>(in);
    if (m.features.width < 1 || m.features.height < 1 || m.features.radius < 0 || m.hidden < 0 ||
        count != static_cast<std::uint64_t>(RewardModel::param_count(m.kind, m.input_dim(), m.hidden)))
        throw CorruptRecord("checkpoint header is inconsistent");
    m.params.resize(static_cast<Eigen::Index>(count));
    in.read(reinterpret_cast<char*>(m.params.data()), static_cast<std::streamsize>(sizeof(double) * count));
    if (!in) throw CorruptRecord("truncated checkpoint");
    return m;
}

}  // namespace hfkit
