// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

// moesim: trace generation, profiling, simulation and comparison front end.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 invariant violation.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/export.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"
#include "moesim/trace.hpp"

namespace fs = std::filesystem;
using namespace moesim;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kInvariant = 4 };

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

struct ModelFlags {
    std::optional<std::uint32_t> experts, top_k, moe_layers;
};

struct SynthFlags {
    std::optional<std::uint32_t> requests, tokens, prefill;
    std::optional<double> zipf, stickiness, coupling;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("-c,--config", f.config, "JSON experiment config");
    app->add_option("--seed", f.seed, "seed for all randomness (overrides config)");
    app->add_option("-o,--out", f.out, std::string("output directory (overrides ") + kOutputDirEnv + " and config)");
}

void add_model(CLI::App* app, ModelFlags& f) {
    app->add_option("--experts", f.experts, "experts per MoE layer");
    app->add_option("--top-k", f.top_k, "experts selected per token");
    app->add_option("--moe-layers", f.moe_layers, "number of MoE layers (all layers MoE)");
}

void add_synth(CLI::App* app, SynthFlags& f) {
    app->add_option("--requests", f.requests, "synthetic requests");
    app->add_option("--tokens", f.tokens, "decode tokens per request");
    app->add_option("--prefill", f.prefill, "prefill tokens per request");
    app->add_option("--zipf", f.zipf, "Zipf exponent of expert popularity");
    app->add_option("--stickiness", f.stickiness, "probability of reusing the previous token's expert");
    app->add_option("--layer-coupling", f.coupling, "probability of following the previous layer's successor list");
}

// Precedence: flags > environment (output dir only) > config file > defaults.
ExperimentConfig resolve(const CommonFlags& c, const ModelFlags& m, const SynthFlags* s) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment(c.config);
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) cfg.output_dir = env;
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.seed = *c.seed;
    if (m.experts) cfg.model.num_experts = *m.experts;
    if (m.top_k) cfg.model.top_k = *m.top_k;
    if (m.moe_layers) {
        cfg.model.num_layers = *m.moe_layers;
        cfg.model.moe_layer_ids.clear();
        for (std::uint32_t i = 0; i < *m.moe_layers; ++i) cfg.model.moe_layer_ids.push_back(i);
    }
    if (s && (s->requests || s->tokens || s->prefill || s->zipf || s->stickiness || s->coupling)) {
        if (!cfg.traces.empty()) throw ConfigError("synthetic flags given but the config names trace files");
        SynthParams p = cfg.synth.value_or(SynthParams{});
        if (s->requests) p.num_requests = *s->requests;
        if (s->tokens) p.tokens_per_request = *s->tokens;
        if (s->prefill) p.prefill_tokens = *s->prefill;
        if (s->zipf) p.zipf_s = *s->zipf;
        if (s->stickiness) p.stickiness = *s->stickiness;
        if (s->coupling) p.layer_coupling = *s->coupling;
        cfg.synth = p;
    }
    return cfg;
}

void use_traces(ExperimentConfig& cfg, const std::vector<std::string>& traces) {
    if (traces.empty()) return;
    cfg.synth.reset();
    cfg.traces.assign(traces.begin(), traces.end());
}

nlohmann::json meta(std::string_view command, const ExperimentConfig& cfg) {
    return {{"tool", "moesim"}, {"command", command}, {"seed", cfg.seed}, {"config", to_json(cfg)}};
}

template <class Fn>
void write_csv(const fs::path& path, const nlohmann::json& header, Fn body) {
    std::ostringstream os;
    write_comment_header(os, header);
    body(os);
    write_text_file(path, os.str());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

int cmd_gen(ExperimentConfig cfg, std::string out_file) {
    if (!cfg.synth) throw ConfigError("gen needs synthetic parameters (\"synth\" in the config or --requests/--tokens/...)");
    if (!cfg.traces.empty()) throw ConfigError("gen writes a trace; remove \"traces\" from the config");
    cfg.validate();
    const TraceSet ts = materialize_traces(cfg);
    const fs::path path = out_file.empty() ? cfg.output_dir / (cfg.model.name + "_trace.jsonl") : fs::path(out_file);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const nlohmann::json prov = meta("gen", cfg);
    save_traces(ts, path, &prov);
    std::size_t tokens = 0;
    for (const auto& r : ts.requests) tokens += r.tokens.size();
    std::cout << "wrote " << path.string() << ": requests=" << ts.requests.size() << " tokens=" << tokens
              << " E=" << ts.model.num_experts << " top_k=" << ts.model.top_k << '\n';
    return kOk;
}

int cmd_profile(const ExperimentConfig& cfg) {
    cfg.validate();
    const TraceSet ts = materialize_traces(cfg);
    const auto& m = ts.model;
    const fs::path dir = cfg.output_dir;
    const auto& opt = cfg.profile;
    std::vector<MoeLayer> layers = opt.layers;
    if (layers.empty())
        for (MoeLayer l = 0; l < m.num_moe_layers(); ++l) layers.push_back(l);

    nlohmann::json summary = meta("profile", cfg);
    nlohmann::json per_layer = nlohmann::json::array();
    std::size_t files = 0;

    auto emit_heatmap = [&](const std::string& stat, MoeLayer l, PhaseFilter ph, const Heatmap& h) {
        nlohmann::json hdr = meta("profile", cfg);
        hdr["stat"] = stat;
        hdr["kind"] = to_string(h.kind);
        hdr["layer"] = l;
        hdr["phase"] = to_string(ph);
        const auto lid = std::to_string(l);
        write_csv(dir / output_name(m.name, stat, lid, to_string(ph)), hdr, [&](std::ostream& os) { write_heatmap_csv(os, h); });
        ++files;
        if (opt.json) {
            nlohmann::json j = hdr;
            j["heatmap"] = heatmap_json(h);
            write_json(dir / output_name(m.name, stat, lid, to_string(ph), "json"), j);
            ++files;
        }
    };

    for (MoeLayer l : layers) {
        for (PhaseFilter ph : opt.phases) {
            const auto lid = std::to_string(l);
            nlohmann::json row = {{"layer", l}, {"phase", to_string(ph)}};
            nlohmann::json hdr = meta("profile", cfg);
            hdr["layer"] = l;
            hdr["phase"] = to_string(ph);

            if (l + 1 < m.num_moe_layers()) {
                const auto counts = cross_layer_counts(ts, l, ph);
                emit_heatmap("cross_layer", l, ph, counts.conditional(m.top_k, opt.conditional_norm));
                const Heatmap c = counts.as_counts();
                if (counts.transitions() > 0) {
                    row["cross_layer_top_fraction"] = cumulative_top_fraction(c, opt.top_fraction);
                    hdr["stat"] = "cumulative_cross_layer";
                    write_csv(dir / output_name(m.name, "cumulative_cross_layer", lid, to_string(ph)), hdr,
                              [&](std::ostream& os) { write_cumulative_csv(os, cumulative_curve(c.values)); });
                    ++files;
                }
            }
            const auto tcounts = cross_token_counts(ts, l, ph);
            emit_heatmap("cross_token", l, ph, tcounts.conditional(m.top_k, opt.conditional_norm));
            if (m.top_k >= 2) {
                const auto cc = coactivation_counts(ts, l, ph);
                if (cc.tokens() > 0) {
                    emit_heatmap("coactivation", l, ph, cc.normalized(m.top_k, opt.coactivation_normalizer));
                    const Heatmap c = cc.as_counts();
                    std::vector<double> upper;  // unordered pairs, i < j
                    for (std::size_t i = 0; i < c.dims; ++i)
                        for (std::size_t j = i + 1; j < c.dims; ++j) upper.push_back(c.at(i, j));
                    row["coactivation_top_fraction"] = cumulative_top_fraction(upper, opt.top_fraction);
                    hdr["stat"] = "cumulative_coactivation";
                    write_csv(dir / output_name(m.name, "cumulative_coactivation", lid, to_string(ph)), hdr,
                              [&](std::ostream& os) { write_cumulative_csv(os, cumulative_curve(upper)); });
                    ++files;
                }
            }
            const auto freq = expert_frequency(ts, l, ph);
            hdr["stat"] = "frequency";
            write_csv(dir / output_name(m.name, "frequency", lid, to_string(ph)), hdr,
                      [&](std::ostream& os) { write_frequency_csv(os, freq); });
            ++files;
            std::uint64_t total = 0;
            for (auto v : freq.counts) total += v;
            if (total > 0) {
                row["frequency_max_normalized"] = *std::max_element(freq.normalized.begin(), freq.normalized.end());
                row["frequency_top_fraction"] = cumulative_top_fraction(freq, opt.top_fraction);
                std::vector<double> fv(freq.counts.begin(), freq.counts.end());
                hdr["stat"] = "cumulative_frequency";
                write_csv(dir / output_name(m.name, "cumulative_frequency", lid, to_string(ph)), hdr,
                          [&](std::ostream& os) { write_cumulative_csv(os, cumulative_curve(fv)); });
                ++files;
            }
            per_layer.push_back(std::move(row));
        }
    }

    std::vector<SpearmanRow> rho;
    for (MoeLayer l : layers) rho.push_back({l, prefill_decode_spearman(ts, l)});
    nlohmann::json hdr = meta("profile", cfg);
    hdr["stat"] = "spearman";
    write_csv(dir / output_name(m.name, "spearman", "all", "prefill_vs_decode"), hdr,
              [&](std::ostream& os) { write_spearman_csv(os, rho); });
    ++files;

    summary["layers"] = std::move(per_layer);
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rho) rj.push_back({{"layer", r.layer}, {"rho", r.rho ? nlohmann::json(*r.rho) : nlohmann::json("undefined")}});
    summary["spearman"] = std::move(rj);
    write_json(dir / (m.name + "_profile_summary.json"), summary);
    ++files;
    std::cout << "profiled " << ts.requests.size() << " requests, " << layers.size() << " layers; wrote " << files
              << " files to " << dir.string() << '\n';
    return kOk;
}

void emit_comparison(const fs::path& dir, const nlohmann::json& header, const std::map<Strategy, RunReport>& reports) {
    const auto rows = compare(reports);
    write_csv(dir / "comparison.csv", header, [&](std::ostream& os) { write_comparison_csv(os, rows); });
    nlohmann::json j = header;
    j["comparison"] = to_json(rows);
    write_json(dir / "comparison.json", j);
    write_comparison_csv(std::cout, rows);
}

int cmd_simulate(const ExperimentConfig& cfg) {
    cfg.validate();
    const TraceSet ts = materialize_traces(cfg);
    const fs::path dir = cfg.output_dir;
    const nlohmann::json header = meta("simulate", cfg);
    std::map<Strategy, RunReport> reports;
    for (Strategy s : cfg.strategies) {
        RunReport r = run(ts, cfg.sim_config(s));
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
        nlohmann::json j = header;
        j["report"] = to_json(r);
        write_json(dir / ("report_" + std::string(to_string(s)) + ".json"), j);
        write_csv(dir / ("kernels_" + std::string(to_string(s)) + ".csv"), header,
                  [&](std::ostream& os) { write_kernel_csv(os, r); });
        reports.emplace(s, std::move(r));
    }
    if (reports.contains(Strategy::base)) emit_comparison(dir, header, reports);
    else std::cerr << "note: no base strategy in the run; comparison table skipped\n";
    return kOk;
}

int cmd_compare(const std::vector<std::string>& files, const std::string& out) {
    std::map<Strategy, RunReport> reports;
    nlohmann::json config;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw DataError("cannot read report " + f);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(f + " is not valid JSON: " + e.what());
        }
        RunReport r = report_from_json(j.contains("report") ? j.at("report") : j);
        if (j.contains("config")) config = j.at("config");
        const Strategy s = r.strategy;
        if (!reports.emplace(s, std::move(r)).second) throw ConfigError("two reports for strategy " + std::string(to_string(s)));
    }
    fs::path dir = "out";
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) dir = env;
    if (!out.empty()) dir = out;
    nlohmann::json header = {{"tool", "moesim"}, {"command", "compare"}, {"inputs", files}, {"config", config}};
    header["seed"] = config.is_object() ? config.value("seed", nlohmann::json()) : nlohmann::json();
    emit_comparison(dir, header, reports);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoE expert placement and allocation simulator for multi-die meshes"};
    app.require_subcommand(1);

    CommonFlags gen_c, prof_c, sim_c;
    ModelFlags gen_m, prof_m, sim_m;
    SynthFlags gen_s, prof_s, sim_s;
    std::string gen_file, cmp_out;
    std::vector<std::string> prof_traces, sim_traces, sim_strategies, cmp_files, prof_phases;
    std::vector<MoeLayer> prof_layers;
    bool prof_json = false;
    std::optional<std::uint32_t> batch, steps;
    std::string dispatch, token_home;

    auto* gen = app.add_subcommand("gen", "generate a synthetic trace file");
    add_common(gen, gen_c);
    add_model(gen, gen_m);
    add_synth(gen, gen_s);
    gen->add_option("--file", gen_file, "trace path (default <out>/<model>_trace.jsonl; .gz compresses)");

    auto* prof = app.add_subcommand("profile", "compute routing statistics");
    add_common(prof, prof_c);
    add_model(prof, prof_m);
    add_synth(prof, prof_s);
    prof->add_option("-t,--trace", prof_traces, "trace file(s); replaces the config's trace source");
    prof->add_option("--layers", prof_layers, "MoE layer indices (default all)");
    prof->add_option("--phase", prof_phases, "prefill|decode|both (repeatable)");
    prof->add_flag("--json", prof_json, "also write heatmaps as JSON");

    auto* sim = app.add_subcommand("simulate", "run strategies over a trace and compare them");
    add_common(sim, sim_c);
    add_model(sim, sim_m);
    add_synth(sim, sim_s);
    sim->add_option("-t,--trace", sim_traces, "trace file(s); replaces the config's trace source");
    sim->add_option("-s,--strategies", sim_strategies, "base,allo_only,pred_only,allo_pred")->delimiter(',');
    sim->add_option("--batch-size", batch, "tokens per decode step");
    sim->add_option("--max-steps", steps, "decode steps to simulate (0 = all)");
    sim->add_option("--dispatch", dispatch, "base dispatch: placement_oblivious|home");
    sim->add_option("--token-home", token_home, "expert_home|round_robin");

    auto* cmp = app.add_subcommand("compare", "compare saved run reports against base");
    cmp->add_option("reports", cmp_files, "report_<strategy>.json files")->required();
    cmp->add_option("-o,--out", cmp_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen(resolve(gen_c, gen_m, &gen_s), gen_file);
        if (*prof) {
            ExperimentConfig cfg = resolve(prof_c, prof_m, &prof_s);
            use_traces(cfg, prof_traces);
            if (!prof_layers.empty()) cfg.profile.layers = prof_layers;
            if (!prof_phases.empty()) {
                cfg.profile.phases.clear();
                for (const auto& p : prof_phases) cfg.profile.phases.push_back(parse_phase_filter(p));
            }
            if (prof_json) cfg.profile.json = true;
            return cmd_profile(cfg);
        }
        if (*sim) {
            ExperimentConfig cfg = resolve(sim_c, sim_m, &sim_s);
            use_traces(cfg, sim_traces);
            if (!sim_strategies.empty()) {
                cfg.strategies.clear();
                for (const auto& s : sim_strategies) cfg.strategies.push_back(parse_strategy(s));
            }
            if (batch) cfg.batch_size = *batch;
            if (steps) cfg.max_steps = *steps;
            if (!dispatch.empty()) cfg.baseline_dispatch = parse_baseline_dispatch(dispatch);
            if (!token_home.empty()) cfg.token_home = parse_token_home(token_home);
            return cmd_simulate(cfg);
        }
        if (*cmp) return cmd_compare(cmp_files, cmp_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInvariant;
    }
    return kOk;
}
