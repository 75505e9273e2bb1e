#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mollae.h"

namespace {

namespace fs = std::filesystem;

struct ModelHandle {
    mollae_model* m = nullptr;
    ~ModelHandle() { mollae_model_free(m); }
};

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { mollae_string_free(s); }
    std::string str() const { return s != nullptr ? std::string(s) : std::string(); }
};

int fail(const std::string& context) {
    std::cerr << "error: " << context;
    const char* detail = mollae_last_error();
    if (detail != nullptr && detail[0] != '\0') std::cerr << ": " << detail;
    std::cerr << "\n";
    return 2;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Every run drops a manifest with the resolved options into the output dir.
void write_manifest(const std::string& out_dir, const std::string& verb, std::uint64_t seed,
                    mollae_model* model, const std::string& checkpoint_path,
                    const nlohmann::json& options) {
    fs::create_directories(out_dir);
    nlohmann::json j;
    j["tool_version"] = mollae_version();
    j["command"] = verb;
    j["seed"] = seed;
    j["options"] = options;
    if (model != nullptr) {
        OwnedString cfg;
        if (mollae_model_config(model, &cfg.s) == MOLLAE_OK) j["resolved_config"] = cfg.str();
    }
    if (!checkpoint_path.empty() && fs::exists(checkpoint_path)) {
        OwnedString hash;
        if (mollae_checkpoint_hash(checkpoint_path.c_str(), &hash.s) == MOLLAE_OK)
            j["checkpoint_hash"] = hash.str();
    }
    std::ofstream out(fs::path(out_dir) / "run_manifest.json");
    out << j.dump(2) << "\n";
}

int load_model(const std::string& checkpoint, ModelHandle& handle) {
    if (checkpoint.empty()) {
        std::cerr << "error: --checkpoint is required for this command\n";
        return 1;
    }
    if (mollae_model_load(checkpoint.c_str(), &handle.m) != MOLLAE_OK)
        return fail("loading checkpoint " + checkpoint);
    return 0;
}

// Prints only the CSV columns whose names contain one of the requested
// substrings; empty filter prints everything.
void print_csv_filtered(const std::string& csv, const std::string& filter) {
    if (filter.empty()) {
        std::cout << csv;
        return;
    }
    std::vector<std::string> wanted;
    std::istringstream fs_(filter);
    std::string tok;
    while (std::getline(fs_, tok, ',')) wanted.push_back(tok);
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    std::vector<std::string> cols;
    std::istringstream hs(header);
    while (std::getline(hs, tok, ',')) cols.push_back(tok);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (const std::string& w : wanted)
            if (cols[c].find(w) != std::string::npos) {
                keep.push_back(c);
                break;
            }
    if (keep.empty()) {
        std::cout << csv;
        return;
    }
    auto emit = [&keep](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (i > 0) std::cout << ",";
            if (keep[i] < fields.size()) std::cout << fields[keep[i]];
        }
        std::cout << "\n";
    };
    emit(cols);
    std::string line;
    while (std::getline(lines, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        while (std::getline(ls, tok, ',')) fields.push_back(tok);
        emit(fields);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fixed-length latent-variable model for 3D molecules"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(mollae_version()));

    std::string g_config, g_checkpoint, g_out = "mollae_out";
    std::uint64_t g_seed = 0;
    int g_steps = 0;  // 0 = per-command default
    app.add_option("--config", g_config, "key=value config file")->configurable(false);
    app.add_option("--checkpoint", g_checkpoint, "model checkpoint path");
    app.add_option("--seed", g_seed, "random seed");
    app.add_option("--steps", g_steps, "refinement steps (or training step budget for train)");
    app.add_option("--out", g_out, "output directory");

    int rc = 0;

    // train
    auto* train = app.add_subcommand("train", "Train on a multi-record XYZ corpus");
    std::string tr_data;
    bool tr_fresh = false;
    train->add_option("--data", tr_data, "training XYZ file")->required();
    train->add_flag("--fresh", tr_fresh, "ignore an existing checkpoint and start over");
    train->callback([&] {
        ModelHandle mh;
        const bool resume = !tr_fresh && !g_checkpoint.empty() && fs::exists(g_checkpoint);
        if (resume) {
            if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        } else {
            std::string cfg_text = g_config.empty() ? std::string() : read_text_file(g_config);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "\nseed=%llu\n", static_cast<unsigned long long>(g_seed));
            cfg_text += buf;
            if (mollae_model_create(cfg_text.c_str(), &mh.m) != MOLLAE_OK) {
                rc = fail("creating model");
                return;
            }
        }
        OwnedString report;
        const char* ckpt = g_checkpoint.empty() ? nullptr : g_checkpoint.c_str();
        if (mollae_train(mh.m, tr_data.c_str(), ckpt, g_steps, &report.s) != MOLLAE_OK) {
            rc = fail("training");
            return;
        }
        write_manifest(g_out, "train", g_seed, mh.m, g_checkpoint,
                       {{"data", tr_data}, {"resume", resume}, {"steps", g_steps}});
        std::cout << report.str() << "\n";
    });

    // sample
    auto* sample = app.add_subcommand("sample", "Draw unconditional samples");
    int sm_count = 10, sm_atoms = 0;
    sample->add_option("--count", sm_count, "number of molecules");
    sample->add_option("--atoms", sm_atoms, "fixed atom count (0 = draw from the trained prior)");
    sample->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        fs::create_directories(g_out);
        const std::string out_xyz = (fs::path(g_out) / "samples.xyz").string();
        const int steps = g_steps > 0 ? g_steps : 100;
        if (mollae_sample(mh.m, g_seed, sm_count, steps, sm_atoms, out_xyz.c_str()) != MOLLAE_OK) {
            rc = fail("sampling");
            return;
        }
        write_manifest(g_out, "sample", g_seed, mh.m, g_checkpoint,
                       {{"count", sm_count}, {"steps", steps}, {"atoms", sm_atoms}});
        std::cout << "wrote " << sm_count << " molecules to " << out_xyz << "\n";
    });

    // encode
    auto* encode = app.add_subcommand("encode", "Encode a molecule to a latent JSON record");
    std::string en_input;
    encode->add_option("--input", en_input, "single-molecule XYZ file")->required();
    encode->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        OwnedString js;
        if (mollae_encode(mh.m, en_input.c_str(), &js.s) != MOLLAE_OK) {
            rc = fail("encoding " + en_input);
            return;
        }
        fs::create_directories(g_out);
        const std::string out_json = (fs::path(g_out) / "latent.json").string();
        std::ofstream out(out_json);
        out << js.str() << "\n";
        write_manifest(g_out, "encode", g_seed, mh.m, g_checkpoint, {{"input", en_input}});
        std::cout << "wrote " << out_json << "\n";
    });

    // decode
    auto* decode = app.add_subcommand("decode", "Decode a latent JSON record to XYZ");
    std::string de_latent;
    int de_atoms = 0;
    decode->add_option("--latent", de_latent, "latent JSON file")->required();
    decode->add_option("--atoms", de_atoms, "override atom count (0 = record value)");
    decode->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        std::ifstream in(de_latent);
        if (!in) {
            std::cerr << "error: cannot open " << de_latent << "\n";
            rc = 2;
            return;
        }
        std::ostringstream os;
        os << in.rdbuf();
        fs::create_directories(g_out);
        const std::string out_xyz = (fs::path(g_out) / "decoded.xyz").string();
        const int steps = g_steps > 0 ? g_steps : 100;
        if (mollae_decode(mh.m, os.str().c_str(), g_seed, steps, de_atoms, out_xyz.c_str()) != MOLLAE_OK) {
            rc = fail("decoding " + de_latent);
            return;
        }
        write_manifest(g_out, "decode", g_seed, mh.m, g_checkpoint,
                       {{"latent", de_latent}, {"steps", steps}, {"atoms", de_atoms}});
        std::cout << "wrote " << out_xyz << "\n";
    });

    // analog
    auto* analog = app.add_subcommand("analog", "Re-decode a molecule with a shifted atom count");
    std::string an_input;
    int an_delta = 0, an_count = 1;
    analog->add_option("--input", an_input, "single-molecule XYZ file")->required();
    analog->add_option("--delta", an_delta, "atom-count shift");
    analog->add_option("--count", an_count, "number of analogs");
    analog->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        fs::create_directories(g_out);
        const std::string out_xyz = (fs::path(g_out) / "analogs.xyz").string();
        const int steps = g_steps > 0 ? g_steps : 100;
        if (mollae_analog(mh.m, an_input.c_str(), an_delta, g_seed, steps, an_count, out_xyz.c_str()) !=
            MOLLAE_OK) {
            rc = fail("analog generation");
            return;
        }
        write_manifest(g_out, "analog", g_seed, mh.m, g_checkpoint,
                       {{"input", an_input}, {"delta", an_delta}, {"count", an_count}, {"steps", steps}});
        std::cout << "wrote " << out_xyz << "\n";
    });

    // swap
    auto* swap = app.add_subcommand("swap", "Exchange latent halves between two molecules");
    std::string sw_a, sw_b;
    swap->add_option("--a", sw_a, "molecule A (XYZ)")->required();
    swap->add_option("--b", sw_b, "molecule B (XYZ)")->required();
    swap->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        fs::create_directories(g_out);
        const std::string out_ab = (fs::path(g_out) / "swap_xA_hB.xyz").string();
        const std::string out_ba = (fs::path(g_out) / "swap_xB_hA.xyz").string();
        const int steps = g_steps > 0 ? g_steps : 100;
        if (mollae_swap(mh.m, sw_a.c_str(), sw_b.c_str(), g_seed, steps, out_ab.c_str(), out_ba.c_str()) !=
            MOLLAE_OK) {
            rc = fail("latent swap");
            return;
        }
        write_manifest(g_out, "swap", g_seed, mh.m, g_checkpoint,
                       {{"a", sw_a}, {"b", sw_b}, {"steps", steps}});
        std::cout << "wrote " << out_ab << " and " << out_ba << "\n";
    });

    // interpolate
    auto* interp = app.add_subcommand("interpolate", "Latent interpolation between two molecules");
    std::string in_a, in_b;
    int in_points = 10;
    double in_lambda = -1.0;
    interp->add_option("--a", in_a, "molecule A (XYZ)")->required();
    interp->add_option("--b", in_b, "molecule B (XYZ)")->required();
    interp->add_option("--points", in_points, "number of frames");
    interp->add_option("--lambda", in_lambda, "emit a single blend at this lambda instead of frames");
    interp->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        const int steps = g_steps > 0 ? g_steps : 100;
        if (in_lambda >= 0.0) {
            fs::create_directories(g_out);
            const std::string out_xyz = (fs::path(g_out) / "blend.xyz").string();
            if (mollae_blend(mh.m, in_a.c_str(), in_b.c_str(), in_lambda, g_seed, steps,
                             out_xyz.c_str()) != MOLLAE_OK) {
                rc = fail("blending");
                return;
            }
            write_manifest(g_out, "interpolate", g_seed, mh.m, g_checkpoint,
                           {{"a", in_a}, {"b", in_b}, {"lambda", in_lambda}, {"steps", steps}});
            std::cout << "wrote " << out_xyz << "\n";
            return;
        }
        OwnedString trend;
        if (mollae_interpolate(mh.m, in_a.c_str(), in_b.c_str(), in_points, g_seed, steps, g_out.c_str(),
                               &trend.s) != MOLLAE_OK) {
            rc = fail("interpolation");
            return;
        }
        write_manifest(g_out, "interpolate", g_seed, mh.m, g_checkpoint,
                       {{"a", in_a}, {"b", in_b}, {"points", in_points}, {"steps", steps}});
        std::cout << trend.str();
    });

    // align
    auto* align = app.add_subcommand("align", "Superpose A onto B via their latent frames");
    std::string al_a, al_b;
    align->add_option("--a", al_a, "molecule A (XYZ)")->required();
    align->add_option("--b", al_b, "molecule B (XYZ)")->required();
    align->callback([&] {
        ModelHandle mh;
        if ((rc = load_model(g_checkpoint, mh)) != 0) return;
        fs::create_directories(g_out);
        const std::string out_xyz = (fs::path(g_out) / "a_aligned.xyz").string();
        OwnedString tf;
        if (mollae_align(mh.m, al_a.c_str(), al_b.c_str(), out_xyz.c_str(), &tf.s) != MOLLAE_OK) {
            rc = fail("alignment");
            return;
        }
        std::ofstream(fs::path(g_out) / "transform.json") << tf.str() << "\n";
        write_manifest(g_out, "align", g_seed, mh.m, g_checkpoint, {{"a", al_a}, {"b", al_b}});
        std::cout << tf.str() << "\n";
    });

    // eval
    auto* eval = app.add_subcommand("eval", "Stability/validity metrics over an XYZ file");
    std::string ev_input, ev_vocab = "qm9", ev_train, ev_metrics;
    eval->add_option("--input", ev_input, "multi-record XYZ file")->required();
    eval->add_option("--vocab", ev_vocab, "qm9 | drugs | comma-separated symbols");
    eval->add_option("--train", ev_train, "training XYZ for novelty");
    eval->add_option("--metrics", ev_metrics, "comma-separated column filter (e.g. stability)");
    eval->callback([&] {
        OwnedString csv;
        if (mollae_eval(ev_input.c_str(), ev_vocab.c_str(), ev_train.empty() ? nullptr : ev_train.c_str(),
                        &csv.s) != MOLLAE_OK) {
            rc = fail("evaluating " + ev_input);
            return;
        }
        fs::create_directories(g_out);
        std::ofstream(fs::path(g_out) / "metrics.csv") << csv.str();
        write_manifest(g_out, "eval", g_seed, nullptr, "",
                       {{"input", ev_input}, {"vocab", ev_vocab}, {"train", ev_train}, {"metrics", ev_metrics}});
        print_csv_filtered(csv.str(), ev_metrics);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0;  // --help / --version
        app.exit(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
