// hfkit: feedback service, offline analysis and headless simulation.

#include <unistd.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "hfkit/acceptance.hpp"
#include "hfkit/analysis.hpp"
#include "hfkit/api.hpp"
#include "hfkit/http.hpp"
#include "hfkit/service.hpp"
#include "hfkit/session_sim.hpp"
#include "hfkit/simulation.hpp"

namespace fs = std::filesystem;
using namespace hfkit;
using nlohmann::json;

namespace {

// Inputs shared by the offline analysis commands.
struct AnalysisInputs {
    std::string log;
    std::vector<std::string> buffers;
    std::string config;
    std::string store;
    std::string env;
    std::string format = "table";
    std::string output;

    void add_to(CLI::App* cmd, bool needs_log) {
        auto* log_opt = cmd->add_option("--log", log, "Exported feedback log (one record per line)")->check(CLI::ExistingFile);
        if (needs_log) log_opt->required();
        cmd->add_option("--buffer", buffers, "Episode store directory; repeatable, consulted in order");
        cmd->add_option("--config", config, "Experiment config; supplies buffers and env when --buffer is absent")
            ->check(CLI::ExistingFile);
        cmd->add_option("--store", store, "Root for relative buffer paths in --config (default: HFKIT_STORE_DIR)");
        cmd->add_option("--env", env, "Environment fixture or map file (default: from --config, else default-8x8)");
        cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "json"}));
        cmd->add_option("-o,--output", output, "Write the report to this file instead of stdout");
    }

    std::optional<ExperimentConfig> experiment() const {
        if (config.empty()) return std::nullopt;
        return load_config_file(config);
    }

    fs::path store_root() const { return store.empty() ? ServiceOptions::from_env().store_dir : fs::path(store); }

    EpisodeCatalog catalog() const {
        std::vector<fs::path> dirs(buffers.begin(), buffers.end());
        if (dirs.empty()) {
            const auto c = experiment();
            if (!c) throw ConfigError("--buffer or --config is required");
            const auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? store_root() / p : fs::path(p); };
            dirs.push_back(resolve(c->buffer));
            if (c->calibration_buffer) dirs.push_back(resolve(*c->calibration_buffer));
        }
        EpisodeCatalog out;
        for (const auto& d : dirs) out.add(EpisodeBuffer::open(d, EpisodeBuffer::Mode::read_only));
        return out;
    }

    GridSpec spec() const {
        if (!env.empty()) return resolve_environment(env);
        if (const auto c = experiment()) return resolve_environment(c->env);
        return resolve_environment("default-8x8");
    }

    json provenance(const LogSnapshot* snapshot) const {
        json p = json::object();
        if (snapshot != nullptr) {
            p["log"] = log;
            p["log_crc32"] = snapshot->crc32;
            p["log_records"] = snapshot->records.size();
        }
        if (const auto c = experiment()) p["config_hash"] = config_hash(*c);
        return p;
    }

    void emit(const std::string& table, const json& body) const {
        const auto text = format == "json" ? body.dump(2) + "\n" : table;
        if (output.empty()) {
            std::cout << text;
            return;
        }
        std::ofstream out(output, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidState("cannot write " + output);
        out << text;
    }
};

std::string provenance_lines(const json& p) {
    std::ostringstream ss;
    if (p.contains("log_crc32")) ss << "log crc32: " << p.at("log_crc32").get<std::uint32_t>() << " (" << p.at("log_records") << " records)\n";
    if (p.contains("config_hash")) ss << "config hash: " << p.at("config_hash").get<std::uint32_t>() << "\n";
    return ss.str();
}

int cmd_beta_report(const AnalysisInputs& in) {
    const auto log = read_log(in.log);
    const auto report = beta_report(log.records, in.catalog());
    const auto prov = in.provenance(&log);
    in.emit(format_table(report) + provenance_lines(prov), {{"beta", to_json(report)}, {"provenance", prov}});
    return 0;
}

int cmd_consistency(const AnalysisInputs& in) {
    const auto log = read_log(in.log);
    const auto table = consistency_table(log.records);
    const auto counts = feedback_counts(log.records);
    std::ostringstream text;
    text << format_table(table);
    for (const auto& [type, n] : counts) text << type << ": " << n << " records\n";
    const auto prov = in.provenance(&log);
    text << provenance_lines(prov);
    in.emit(text.str(), {{"consistency", to_json(table)}, {"feedback_counts", counts}, {"provenance", prov}});
    return 0;
}

int cmd_model_eval(const AnalysisInputs& in, const std::string& checkpoint) {
    if (!fs::exists(checkpoint)) throw NotFound("no checkpoint " + checkpoint);
    const auto model = load_checkpoint(checkpoint);
    const auto eval = evaluate_model(model, in.spec());
    json prov = in.provenance(nullptr);
    prov["checkpoint"] = checkpoint;
    in.emit(format_table(eval) + provenance_lines(prov), {{"evaluation", to_json(eval)}, {"provenance", prov}});
    return 0;
}

int cmd_report(const AnalysisInputs& in, const std::string& checkpoint) {
    const auto log = read_log(in.log);
    const auto catalog = in.catalog();
    json body{{"feedback_counts", feedback_counts(log.records)}};
    std::ostringstream text;
    text << "== rationality\n";
    try {
        const auto report = beta_report(log.records, catalog);
        body["beta"] = to_json(report);
        text << format_table(report);
    } catch (const NoCalibrationData& e) {
        body["beta"] = nullptr;
        text << "no calibration data\n";
    }
    const auto table = consistency_table(log.records);
    body["consistency"] = to_json(table);
    text << "== feedback\n";
    for (const auto& [type, n] : feedback_counts(log.records)) text << type << ": " << n << " records\n";
    text << format_table(table);
    if (!checkpoint.empty()) {
        const auto eval = evaluate_model(load_checkpoint(checkpoint), in.spec());
        body["evaluation"] = to_json(eval);
        text << "== reward model\n" << format_table(eval);
    }
    const auto prov = in.provenance(&log);
    body["provenance"] = prov;
    text << "== provenance\n" << provenance_lines(prov);
    in.emit(text.str(), body);
    return 0;
}

PolicyKind parse_policy(const std::string& text) {
    const auto colon = text.find(':');
    const auto name = text.substr(0, colon);
    if (name == "optimal" && colon == std::string::npos) return PolicyKind::optimal();
    if (colon == std::string::npos) throw ConfigError("policy '" + text + "' needs a parameter, e.g. epsilon:0.1");
    double param = 0.0;
    try {
        param = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad policy parameter in '" + text + "'");
    }
    if (name == "epsilon") return PolicyKind::epsilon(param);
    if (name == "boltzmann") return PolicyKind::boltzmann(param);
    throw ConfigError("unknown policy '" + name + "' (optimal, epsilon:E, boltzmann:B)");
}

HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hfkit: human feedback collection, analysis and simulation"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the feedback service over HTTP");
    std::string listen, store, static_dir;
    serve->add_option("--listen", listen, "host:port (default: HFKIT_LISTEN, else 127.0.0.1:8080)");
    serve->add_option("--store", store, "Store directory (default: HFKIT_STORE_DIR, else ./hfkit-store)");
    serve->add_option("--static", static_dir, "Directory served at / (web client bundle)");

    // rollout
    auto* rollout = app.add_subcommand("rollout", "Append policy rollouts to an episode store");
    std::string rollout_env = "default-8x8", rollout_buffer, source_kind = "policy-rollout";
    std::vector<std::string> policies{"optimal"};
    int episodes = 10;
    std::uint64_t rollout_seed = 0;
    bool mixed = false;
    rollout->add_option("--env", rollout_env, "Environment fixture or map file");
    rollout->add_option("--buffer", rollout_buffer, "Episode store directory")->required();
    rollout->add_option("--policy", policies, "optimal, epsilon:E or boltzmann:B; repeatable");
    rollout->add_option("-n,--episodes", episodes, "Episodes per policy")->check(CLI::PositiveNumber);
    rollout->add_option("--seed", rollout_seed, "Seed of the first policy; later policies use seed+1, ...");
    rollout->add_option("--source", source_kind, "source_kind of the episode ids");
    rollout->add_flag("--mixed", mixed, "Use the eight-policy mix (epsilon 0, .1, .3, .5, 1 and boltzmann 1, 5, 20)");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a snapshot on an experiment's log in the store");
    std::string train_store, train_experiment;
    train_cmd->add_option("--store", train_store, "Store directory (default: HFKIT_STORE_DIR)");
    train_cmd->add_option("--experiment", train_experiment, "Experiment id")->required();

    // analysis
    AnalysisInputs beta_in, cons_in, eval_in, report_in;
    std::string eval_checkpoint, report_checkpoint;
    auto* beta_cmd = app.add_subcommand("beta-report", "Rationality per context slice and its decomposition");
    beta_in.add_to(beta_cmd, true);
    auto* cons_cmd = app.add_subcommand("consistency", "Per-user consistency over repeated feedback");
    cons_in.add_to(cons_cmd, true);
    auto* eval_cmd = app.add_subcommand("model-eval", "Evaluate a reward-model checkpoint against ground truth");
    eval_in.add_to(eval_cmd, false);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "Reward-model checkpoint (.hfrm)")->required();
    auto* report_cmd = app.add_subcommand("report", "Full analysis report: rationality, feedback, consistency, model");
    report_in.add_to(report_cmd, true);
    report_cmd->add_option("--checkpoint", report_checkpoint, "Optional reward-model checkpoint to evaluate");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Simulated annotator sessions, or the headless acceptance suite");
    bool acceptance = false;
    std::vector<int> only;
    std::string work_dir, sim_url, sim_store, sim_experiment, sim_config, sim_output;
    int sessions = 1;
    std::int64_t events = 100;
    double sim_beta = 5.0;
    std::uint64_t sim_seed = 1;
    std::vector<std::string> kinds;
    sim->add_flag("--acceptance", acceptance, "Run the acceptance criteria and print one line per criterion");
    sim->add_option("--only", only, "Acceptance criterion ids to run (default: all)");
    sim->add_option("--work-dir", work_dir, "Scratch directory for the acceptance run");
    sim->add_option("--url", sim_url, "host:port of a running service; embedded service when absent");
    sim->add_option("--store", sim_store, "Store directory of the embedded service (default: HFKIT_STORE_DIR)");
    sim->add_option("--experiment", sim_experiment, "Experiment id");
    sim->add_option("--config", sim_config, "Create the experiment from this config first")->check(CLI::ExistingFile);
    sim->add_option("--sessions", sessions, "Concurrent sessions")->check(CLI::PositiveNumber);
    sim->add_option("--events", events, "Events per session")->check(CLI::PositiveNumber);
    sim->add_option("--beta", sim_beta, "Annotator rationality for every feedback type")->check(CLI::NonNegativeNumber);
    sim->add_option("--seed", sim_seed, "Seed of the first session; later sessions use seed+1, ...");
    sim->add_option("--kinds", kinds, "Feedback types to rotate through (default: all enabled)");
    sim->add_option("-o,--output", sim_output, "Write the session summaries as JSON to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            ServiceOptions options = store.empty() ? ServiceOptions::from_env() : ServiceOptions{store, {}};
            FeedbackService service(options);
            ApiRouter router(service);
            HttpServer server(router, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
            const auto address = listen.empty() ? ListenAddress::from_env() : ListenAddress::parse(listen);
            const int port = server.bind(address);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "serving " << options.store_dir << " on http://" << address.host << ":" << port << std::endl;
            server.run();
            g_server = nullptr;
            return 0;
        }
        if (*rollout) {
            const auto spec = resolve_environment(rollout_env);
            const auto q = value_iteration(spec);
            std::vector<EpisodeRecord> out;
            if (mixed) {
                out = mixed_rollouts(spec, q, episodes, rollout_seed);
                for (auto& ep : out) ep.id.source_kind = source_kind;
            } else {
                RolloutOptions opts;
                opts.source_kind = source_kind;
                std::uint64_t seed = rollout_seed;
                for (const auto& p : policies) {
                    auto batch = rollout_policy(spec, q, parse_policy(p), episodes, seed++, opts);
                    out.insert(out.end(), batch.begin(), batch.end());
                }
            }
            const auto written = EpisodeBuffer::open(rollout_buffer)->ingest(out);
            std::cout << json{{"buffer", rollout_buffer}, {"generated", out.size()}, {"written", written}}.dump() << "\n";
            return 0;
        }
        if (*train_cmd) {
            ServiceOptions options = train_store.empty() ? ServiceOptions::from_env() : ServiceOptions{train_store, {}};
            FeedbackService service(options);
            std::cout << to_json(service.run_training(train_experiment)).dump(2) << "\n";
            return 0;
        }
        if (*beta_cmd) return cmd_beta_report(beta_in);
        if (*cons_cmd) return cmd_consistency(cons_in);
        if (*eval_cmd) return cmd_model_eval(eval_in, eval_checkpoint);
        if (*report_cmd) return cmd_report(report_in, report_checkpoint);
        if (*sim) {
            if (acceptance) {
                AcceptanceOptions options;
                options.work_dir = work_dir.empty()
                                       ? fs::temp_directory_path() / ("hfkit-acceptance-" + std::to_string(::getpid()))
                                       : fs::path(work_dir);
                options.only = only;
                int failed = 0;
                run_acceptance(options, [&](const CriterionResult& r) {
                    std::cout << format_result(r) << std::endl;
                    failed += !r.passed;
                });
                if (work_dir.empty()) fs::remove_all(options.work_dir);
                return failed == 0 ? 0 : 1;
            }
            if (sim_experiment.empty() && sim_config.empty())
                throw ConfigError("--experiment or --config is required without --acceptance");

            std::unique_ptr<FeedbackService> service;
            std::unique_ptr<ApiRouter> router;
            ListenAddress remote;
            if (!sim_url.empty()) {
                remote = ListenAddress::parse(sim_url);
            } else {
                service = std::make_unique<FeedbackService>(sim_store.empty() ? ServiceOptions::from_env()
                                                                               : ServiceOptions{sim_store, {}});
                router = std::make_unique<ApiRouter>(*service);
            }
            const auto make_client = [&]() -> std::unique_ptr<ApiClient> {
                if (router) return std::make_unique<InProcessClient>(*router);
                return std::make_unique<HttpClient>(remote.host, remote.port);
            };
            if (!sim_config.empty()) {
                const auto config = load_config_file(sim_config);
                sim_experiment = make_client()->request("POST", "/api/experiments", to_json(config)).at("experiment_id");
            }

            std::vector<FeedbackKind> rotation;
            for (const auto& k : kinds) rotation.push_back(feedback_kind_from_string(k));
            std::vector<SessionRunSummary> summaries(static_cast<std::size_t>(sessions));
            std::vector<std::string> errors(static_cast<std::size_t>(sessions));
            std::vector<std::thread> threads;
            for (int i = 0; i < sessions; ++i)
                threads.emplace_back([&, i] {
                    try {
                        auto client = make_client();
                        SessionPlan plan;
                        for (auto k : kFeedbackKinds) plan.profile.beta_by_type[k] = sim_beta;
                        plan.profile.rng_seed = sim_seed + static_cast<std::uint64_t>(i);
                        plan.profile.user_id = "simulated-" + std::to_string(i);
                        plan.events = events;
                        plan.kinds = rotation;
                        summaries[static_cast<std::size_t>(i)] = run_simulated_session(*client, sim_experiment, plan);
                    } catch (const std::exception& e) {
                        errors[static_cast<std::size_t>(i)] = e.what();
                    }
                });
            for (auto& t : threads) t.join();

            json out = json::array();
            bool ok = true;
            for (std::size_t i = 0; i < summaries.size(); ++i) {
                auto j = to_json(summaries[i]);
                if (!errors[i].empty()) j["failure"] = errors[i];
                ok = ok && errors[i].empty() && summaries[i].errors.empty() && summaries[i].accepted == events;
                out.push_back(j);
            }
            const json body{{"experiment_id", sim_experiment}, {"sessions", out}, {"success", ok}};
            if (sim_output.empty()) {
                std::cout << body.dump(2) << "\n";
            } else {
                std::ofstream(sim_output) << body.dump(2) << "\n";
            }
            return ok ? 0 : 1;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
