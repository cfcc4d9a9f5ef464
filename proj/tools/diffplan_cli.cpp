#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffplan/checkpoint.hpp"
#include "diffplan/dataset.hpp"
#include "diffplan/errors.hpp"
#include "diffplan/metrics.hpp"
#include "diffplan/model.hpp"
#include "diffplan/sim.hpp"
#include "diffplan/train.hpp"
#include "diffplan/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace diffplan;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitProperty = 5;

std::uint64_t fnv_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash " + path.string());
    std::uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<fs::path>& artifacts) {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["artifacts"] = json::array();
    for (const auto& a : artifacts) {
        j["artifacts"].push_back(json{{"file", a.filename().string()},
                                      {"fnv1a", fnv_file(a)}});
    }
    write_text(dir / "manifest.json", j.dump(2));
}

std::vector<Scenario> load_suite(const std::string& path) {
    json j = json::parse(read_text(path));
    std::vector<Scenario> out;
    for (const auto& s : j) out.push_back(scenario_from_json(s.dump()));
    return out;
}

std::string suite_to_json(const std::vector<Scenario>& suite) {
    json j = json::array();
    for (const auto& s : suite) j.push_back(json::parse(scenario_to_json(s)));
    return j.dump(2);
}

Model model_from_checkpoint(const Checkpoint& ck, std::uint64_t seed) {
    Model model(model_config_from_json(ck.model_config_json), seed);
    restore_model(model, ck);
    return model;
}

std::string plan_svg(const Trajectory& plan, const OccupancyObservation& obs) {
    const double scale = 6.0, cx = 200.0, cy = 200.0;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\">\n";
    svg << "<rect width=\"400\" height=\"400\" fill=\"#f6f6f6\"/>\n";
    // occupancy cells for context: drivable gray, agents red, statics black
    for (int r = 0; r < obs.h; ++r)
        for (int c = 0; c < obs.w; ++c) {
            const char* fill = nullptr;
            if (obs.at(kChDynamic, r, c) > 0.5) fill = "#d66";
            else if (obs.at(kChStatic, r, c) > 0.5) fill = "#444";
            else if (obs.at(kChDrivable, r, c) > 0.5) fill = "#ddd";
            if (!fill) continue;
            const double ex = (c - obs.w / 2 + 0.5) * obs.cell_size;
            const double ey = (obs.h / 2 - r - 0.5) * obs.cell_size;
            svg << "<rect x=\"" << cx + ex * scale - 1.5 << "\" y=\"" << cy - ey * scale - 1.5
                << "\" width=\"3\" height=\"3\" fill=\"" << fill << "\"/>\n";
        }
    svg << "<circle cx=\"" << cx + obs.goal.x * scale << "\" cy=\"" << cy - obs.goal.y * scale
        << "\" r=\"5\" fill=\"none\" stroke=\"#2a2\" class=\"goal\"/>\n";
    for (const auto& p : plan.points)
        svg << "<circle cx=\"" << cx + p.x * scale << "\" cy=\"" << cy - p.y * scale
            << "\" r=\"3\" fill=\"#36c\" class=\"wp\"/>\n";
    svg << "</svg>\n";
    return svg.str();
}

int run(int argc, char** argv) {
    CLI::App app{"diffusion trajectory planner toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate scenarios and an expert dataset");
    int gd_scenarios = 10, gd_max_steps = 400, gd_horizon = 10;
    std::uint64_t gd_seed = 0;
    std::string gd_out = "data", gd_difficulty = "mixed";
    gen->add_option("--scenarios", gd_scenarios, "scenario count")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gd_seed, "rng seed");
    gen->add_option("--out", gd_out, "output directory");
    gen->add_option("--difficulty", gd_difficulty, "empty|easy|medium|hard|easy_medium|mixed");
    gen->add_option("--horizon", gd_horizon, "label waypoint count");
    gen->add_option("--max-steps", gd_max_steps, "episode step cap");

    // train
    auto* tr = app.add_subcommand("train", "run a training stage");
    int tr_stage = 1;
    std::string tr_config, tr_data, tr_out = "run", tr_init;
    std::vector<std::string> tr_ablate;
    tr->add_option("--stage", tr_stage, "1 or 2");
    tr->add_option("--config", tr_config, "run config JSON file");
    tr->add_option("--data", tr_data, "dataset file")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--init", tr_init, "stage-1 checkpoint (stage 2)");
    tr->add_option("--ablate", tr_ablate, "ablation flags");

    // sample
    auto* sm = app.add_subcommand("sample", "sample a plan for one dataset frame");
    std::string sm_ckpt, sm_data, sm_out = "sample_out";
    int sm_frame = 0, sm_steps = 2;
    std::uint64_t sm_seed = 0;
    sm->add_option("--ckpt", sm_ckpt, "checkpoint file")->required();
    sm->add_option("--data", sm_data, "dataset file")->required();
    sm->add_option("--frame", sm_frame, "frame index");
    sm->add_option("--steps", sm_steps, "reverse denoising steps");
    sm->add_option("--seed", sm_seed, "rng seed");
    sm->add_option("--out", sm_out, "output directory");

    // eval-closed-loop
    auto* ev = app.add_subcommand("eval-closed-loop", "run and score closed-loop episodes");
    std::string ev_ckpt, ev_suite, ev_out = "eval_out", ev_difficulty = "mixed";
    std::string ev_sweep;
    int ev_scenarios = 20, ev_steps = 2, ev_max_steps = 400;
    std::uint64_t ev_seed = 1;
    bool ev_expert = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file");
    ev->add_option("--suite", ev_suite, "scenario suite JSON");
    ev->add_option("--scenarios", ev_scenarios, "generated suite size");
    ev->add_option("--seed", ev_seed, "suite/policy seed");
    ev->add_option("--difficulty", ev_difficulty, "generated suite difficulty");
    ev->add_option("--steps", ev_steps, "reverse denoising steps");
    ev->add_option("--steps-sweep", ev_sweep, "comma list, e.g. 1,2,5,10");
    ev->add_option("--max-steps", ev_max_steps, "episode step cap");
    ev->add_option("--out", ev_out, "output directory");
    ev->add_flag("--expert", ev_expert, "evaluate the rule-based expert");

    // verify
    auto* vf = app.add_subcommand("verify", "run property suites");
    std::string vf_suite = "all";
    vf->add_option("--suite", vf_suite, "gradcheck|oracle|metrics|all");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        fs::create_directories(gd_out);
        auto suite = generate_scenarios(gd_seed, gd_scenarios, gd_difficulty);
        const fs::path suite_path = fs::path(gd_out) / "suite.json";
        write_text(suite_path, suite_to_json(suite));
        Dataset ds = build_expert_dataset(suite, gd_horizon, gd_max_steps);
        const fs::path ds_path = fs::path(gd_out) / "dataset.bin";
        save_dataset(ds_path.string(), ds);
        json cfg{{"scenarios", gd_scenarios},
                 {"difficulty", gd_difficulty},
                 {"horizon", gd_horizon},
                 {"max_steps", gd_max_steps},
                 {"frames", ds.frames.size()}};
        write_manifest(gd_out, "gen-data", cfg, gd_seed, {suite_path, ds_path});
        std::cout << "wrote " << ds.frames.size() << " frames from " << gd_scenarios
                  << " scenarios to " << gd_out << "\n";
        return 0;
    }

    if (tr->parsed()) {
        RunConfig cfg = default_run_config();
        if (!tr_config.empty()) cfg = run_config_from_json(read_text(tr_config));
        cfg.stage = tr_stage;
        for (const auto& flag : tr_ablate) apply_ablation(cfg, flag);
        Dataset ds = load_dataset(tr_data);
        fs::create_directories(tr_out);
        TrainResult result;
        if (tr_stage == 1) {
            result = train_stage1(ds, cfg);
        } else if (tr_stage == 2) {
            Checkpoint init;
            if (!tr_init.empty()) init = load_checkpoint(tr_init);
            else if (!cfg.one_stage)
                throw ConfigError("stage 2 needs --init unless one-stage is set");
            result = train_stage2(ds, init, cfg);
        } else {
            throw ConfigError("--stage must be 1 or 2");
        }
        const fs::path ck_path = fs::path(tr_out) / "checkpoint.bin";
        const fs::path csv_path = fs::path(tr_out) / "loss.csv";
        save_checkpoint(ck_path.string(), result.checkpoint);
        write_text(csv_path, loss_curve_csv(result));
        write_manifest(tr_out, "train", json::parse(run_config_to_json(cfg)), cfg.seed,
                       {ck_path, csv_path});
        std::cout << "stage " << tr_stage << ": " << result.curve.size()
                  << " optimizer steps, final total "
                  << (result.curve.empty() ? 0.0 : result.curve.back().at("total")) << "\n";
        return 0;
    }

    if (sm->parsed()) {
        Checkpoint ck = load_checkpoint(sm_ckpt);
        Model model = model_from_checkpoint(ck, sm_seed);
        ScheduleParams schedule = schedule_from_json(ck.schedule_json);
        Dataset ds = load_dataset(sm_data);
        if (sm_frame < 0 || sm_frame >= static_cast<int>(ds.frames.size()))
            throw ConfigError("--frame out of range");
        Policy policy = make_policy(model, schedule, sm_steps, sm_seed);
        const OccupancyObservation& obs = ds.frames[sm_frame].obs;
        Trajectory plan = policy(obs);
        fs::create_directories(sm_out);
        std::ostringstream csv;
        csv << "t_index,x,y\n";
        for (size_t i = 0; i < plan.points.size(); ++i)
            csv << i << "," << plan.points[i].x << "," << plan.points[i].y << "\n";
        const fs::path csv_path = fs::path(sm_out) / "trajectory.csv";
        const fs::path svg_path = fs::path(sm_out) / "plan.svg";
        write_text(csv_path, csv.str());
        write_text(svg_path, plan_svg(plan, obs));
        json cfg{{"ckpt", sm_ckpt}, {"frame", sm_frame}, {"steps", sm_steps}};
        write_manifest(sm_out, "sample", cfg, sm_seed, {csv_path, svg_path});
        std::cout << "sampled " << plan.points.size() << " waypoints (" << sm_steps
                  << " steps)\n";
        return 0;
    }

    if (ev->parsed()) {
        std::vector<Scenario> suite = ev_suite.empty()
                                          ? generate_scenarios(ev_seed, ev_scenarios,
                                                               ev_difficulty)
                                          : load_suite(ev_suite);
        fs::create_directories(ev_out);
        std::vector<fs::path> artifacts;

        Model model({}, 0);
        ScheduleParams schedule;
        Checkpoint ck;
        if (!ev_expert) {
            if (ev_ckpt.empty()) throw ConfigError("eval needs --ckpt or --expert");
            ck = load_checkpoint(ev_ckpt);
            model = model_from_checkpoint(ck, ev_seed);
            schedule = schedule_from_json(ck.schedule_json);
        }

        auto evaluate = [&](int steps) {
            std::vector<EpisodeScore> scores;
            for (const auto& sc : suite) {
                const double ref = run_expert_episode(sc, ev_max_steps).progress();
                EpisodeTrace trace;
                if (ev_expert) {
                    trace = run_expert_episode(sc, ev_max_steps);
                } else {
                    Policy policy = make_policy(model, schedule, steps, ev_seed);
                    trace = run_episode(policy, sc, ev_max_steps);
                }
                scores.push_back(score_episode(trace, ref));
            }
            return scores;
        };

        auto aggregate = [](const std::vector<EpisodeScore>& scores) {
            double ds = 0.0, pd = 0.0;
            for (const auto& s : scores) {
                ds += s.ds;
                pd += s.pdms;
            }
            const double n = scores.empty() ? 1.0 : static_cast<double>(scores.size());
            return std::pair<double, double>{ds / n, pd / n};
        };

        auto scores = evaluate(ev_steps);
        const fs::path report_path = fs::path(ev_out) / "report.json";
        write_text(report_path, score_report(scores));
        artifacts.push_back(report_path);
        auto [mean_ds, mean_pdms] = aggregate(scores);
        std::cout << "episodes " << scores.size() << "  mean DS " << mean_ds
                  << "  mean PDMS " << 100.0 * mean_pdms << "\n";

        if (!ev_sweep.empty()) {
            std::ostringstream csv;
            csv << "steps,mean_ds,mean_pdms\n";
            std::stringstream ss(ev_sweep);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                const int steps = std::stoi(tok);
                auto [sds, spdms] = aggregate(evaluate(steps));
                csv << steps << "," << sds << "," << 100.0 * spdms << "\n";
            }
            const fs::path sweep_path = fs::path(ev_out) / "steps_sweep.csv";
            write_text(sweep_path, csv.str());
            artifacts.push_back(sweep_path);
        }
        json cfg{{"ckpt", ev_ckpt},
                 {"suite", ev_suite},
                 {"scenarios", ev_scenarios},
                 {"difficulty", ev_difficulty},
                 {"steps", ev_steps},
                 {"expert", ev_expert}};
        write_manifest(ev_out, "eval-closed-loop", cfg, ev_seed, artifacts);
        return 0;
    }

    if (vf->parsed()) {
        std::vector<CheckResult> results;
        if (vf_suite == "gradcheck" || vf_suite == "all") {
            auto r = verify_gradcheck();
            results.insert(results.end(), r.begin(), r.end());
        }
        if (vf_suite == "oracle" || vf_suite == "all") {
            auto r = verify_oracle();
            results.insert(results.end(), r.begin(), r.end());
        }
        if (vf_suite == "metrics" || vf_suite == "all") {
            auto r = verify_metrics();
            results.insert(results.end(), r.begin(), r.end());
        }
        if (results.empty()) throw ConfigError("unknown suite: " + vf_suite);
        std::cout << format_results(results);
        return all_passed(results) ? 0 : kExitProperty;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ValidationError& e) {
        std::cerr << "property error: " << e.what() << "\n";
        return kExitProperty;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
