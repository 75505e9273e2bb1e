#include "mollae.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsonio.hpp"
#include "manipulate.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "training.hpp"
#include "version.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

mollae_status classify(const std::exception& e) {
    g_last_error = e.what();
    if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) return MOLLAE_ERR_INVALID_ARGUMENT;
    if (g_last_error.rfind("cannot open", 0) == 0 || g_last_error.rfind("cannot write", 0) == 0)
        return MOLLAE_ERR_IO;
    return MOLLAE_ERR_RUNTIME;
}

template <class F>
mollae_status guard(F&& f) {
    try {
        f();
        g_last_error.clear();
        return MOLLAE_OK;
    } catch (const std::exception& e) {
        return classify(e);
    } catch (...) {
        g_last_error = "unknown error";
        return MOLLAE_ERR_RUNTIME;
    }
}

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

mollae::Molecule load_one(const std::string& path, const mollae::AtomVocabulary& vocab) {
    std::vector<mollae::Molecule> mols = mollae::load_xyz(path, vocab);
    if (mols.empty()) throw std::runtime_error("no molecules in " + path);
    return mols.front();
}

}  // namespace

struct mollae_model {
    std::unique_ptr<mollae::Model> impl;
    std::string ckpt_hash;  // hash of the checkpoint this model was loaded from / saved to
};

extern "C" {

const char* mollae_version(void) { return mollae::kToolVersion; }

const char* mollae_last_error(void) { return g_last_error.c_str(); }

void mollae_string_free(char* s) { std::free(s); }

mollae_status mollae_model_create(const char* config_text, mollae_model** out) {
    return guard([&] {
        require(out != nullptr, "out must not be null");
        mollae::TrainConfig cfg;
        if (config_text != nullptr && config_text[0] != '\0') cfg = mollae::TrainConfig::parse_text(config_text);
        cfg.validate();
        auto handle = std::make_unique<mollae_model>();
        handle->impl = std::make_unique<mollae::Model>(cfg, mollae::vocab_from_spec(cfg.vocab));
        *out = handle.release();
    });
}

mollae_status mollae_model_load(const char* checkpoint_path, mollae_model** out) {
    return guard([&] {
        require(checkpoint_path != nullptr && out != nullptr, "checkpoint_path and out must not be null");
        auto handle = std::make_unique<mollae_model>();
        handle->impl = mollae::Model::load(checkpoint_path);
        handle->ckpt_hash = mollae::file_hash(checkpoint_path);
        *out = handle.release();
    });
}

mollae_status mollae_model_save(mollae_model* m, const char* checkpoint_path) {
    return guard([&] {
        require(m != nullptr && checkpoint_path != nullptr, "model and checkpoint_path must not be null");
        m->impl->save(checkpoint_path);
        m->ckpt_hash = mollae::file_hash(checkpoint_path);
    });
}

void mollae_model_free(mollae_model* m) { delete m; }

mollae_status mollae_model_config(mollae_model* m, char** out_text) {
    return guard([&] {
        require(m != nullptr && out_text != nullptr, "model and out_text must not be null");
        *out_text = dup_string(m->impl->config().serialize());
    });
}

mollae_status mollae_checkpoint_hash(const char* path, char** out_hash) {
    return guard([&] {
        require(path != nullptr && out_hash != nullptr, "path and out_hash must not be null");
        *out_hash = dup_string(mollae::file_hash(path));
    });
}

mollae_status mollae_train(mollae_model* m, const char* xyz_path, const char* checkpoint_path,
                           int train_steps_override, char** out_report_json) {
    return guard([&] {
        require(m != nullptr && xyz_path != nullptr, "model and xyz_path must not be null");
        if (train_steps_override > 0) m->impl->set_train_steps(train_steps_override);
        std::vector<mollae::Molecule> dataset = mollae::load_xyz(xyz_path, m->impl->vocab());
        mollae::TrainOptions opts;
        if (checkpoint_path != nullptr) opts.checkpoint_path = checkpoint_path;
        mollae::TrainReport rep = mollae::train(*m->impl, dataset, opts);
        if (checkpoint_path != nullptr && std::filesystem::exists(checkpoint_path))
            m->ckpt_hash = mollae::file_hash(checkpoint_path);
        if (out_report_json != nullptr) {
            nlohmann::json j;
            j["steps_done"] = rep.steps_done;
            j["first_loss"] = rep.first_loss;
            j["last_loss"] = rep.last_loss;
            j["val_loss"] = rep.val_loss;
            j["aborted_nonfinite"] = rep.aborted_nonfinite;
            *out_report_json = dup_string(j.dump(2));
        }
        if (rep.aborted_nonfinite) throw std::runtime_error("training aborted on non-finite loss");
    });
}

mollae_status mollae_sample(mollae_model* m, uint64_t seed, int count, int steps, int n_atoms,
                            const char* out_xyz_path) {
    return guard([&] {
        require(m != nullptr && out_xyz_path != nullptr, "model and out_xyz_path must not be null");
        require(count >= 1, "count must be >= 1");
        require(steps >= 1, "steps must be >= 1");
        mollae::Rng rng(seed);
        std::vector<mollae::Molecule> mols;
        if (n_atoms > 0) {
            const mollae::TrainConfig& cfg = m->impl->config();
            const double sx = std::sqrt(cfg.var_x), sh = std::sqrt(cfg.var_h);
            mols.reserve(static_cast<std::size_t>(count));
            for (int s = 0; s < count; ++s) {
                mollae::LatentCode z;
                z.z_x.resize(cfg.n_z, 3);
                for (Eigen::Index i = 0; i < cfg.n_z; ++i)
                    for (Eigen::Index j = 0; j < 3; ++j) z.z_x(i, j) = sx * rng.normal();
                z.z_h.resize(cfg.n_z, cfg.d_z);
                for (Eigen::Index i = 0; i < cfg.n_z; ++i)
                    for (Eigen::Index j = 0; j < cfg.d_z; ++j) z.z_h(i, j) = sh * rng.normal();
                mols.push_back(mollae::decode(z, n_atoms, steps, m->impl->schedule(), m->impl->decoder(), rng));
            }
        } else {
            mols = mollae::generate(*m->impl, count, steps, rng);
        }
        mollae::save_xyz(out_xyz_path, mols, m->impl->vocab());
    });
}

mollae_status mollae_encode(mollae_model* m, const char* xyz_path, char** out_json) {
    return guard([&] {
        require(m != nullptr && xyz_path != nullptr && out_json != nullptr,
                "model, xyz_path and out_json must not be null");
        mollae::Molecule mol = load_one(xyz_path, m->impl->vocab());
        mollae::LatentPosterior post = m->impl->encoder().encode(mollae::center(mol), m->impl->vocab());
        *out_json = dup_string(
            mollae::latent_record_json(post, static_cast<int>(mol.size()), m->ckpt_hash).dump(2));
    });
}

mollae_status mollae_decode(mollae_model* m, const char* latent_json, uint64_t seed, int steps,
                            int n_atoms_override, const char* out_xyz_path) {
    return guard([&] {
        require(m != nullptr && latent_json != nullptr && out_xyz_path != nullptr,
                "model, latent_json and out_xyz_path must not be null");
        require(steps >= 1, "steps must be >= 1");
        mollae::LatentRecord rec = mollae::parse_latent_record(nlohmann::json::parse(latent_json));
        const int n = n_atoms_override > 0 ? n_atoms_override : rec.n_atoms;
        mollae::Rng rng(seed);
        mollae::LatentCode z{rec.post.mu_x, rec.post.mu_h};
        mollae::Molecule mol = mollae::decode(z, n, steps, m->impl->schedule(), m->impl->decoder(), rng);
        mollae::save_xyz(out_xyz_path, {mol}, m->impl->vocab());
    });
}

mollae_status mollae_analog(mollae_model* m, const char* xyz_path, int delta, uint64_t seed,
                            int steps, int count, const char* out_xyz_path) {
    return guard([&] {
        require(m != nullptr && xyz_path != nullptr && out_xyz_path != nullptr,
                "model, xyz_path and out_xyz_path must not be null");
        require(count >= 1, "count must be >= 1");
        require(steps >= 1, "steps must be >= 1");
        mollae::Molecule mol = load_one(xyz_path, m->impl->vocab());
        mollae::Rng rng(seed);
        std::vector<mollae::Molecule> out;
        out.reserve(static_cast<std::size_t>(count));
        for (int s = 0; s < count; ++s) out.push_back(mollae::analog(*m->impl, mol, delta, steps, rng));
        mollae::save_xyz(out_xyz_path, out, m->impl->vocab());
    });
}

mollae_status mollae_swap(mollae_model* m, const char* xyz_a, const char* xyz_b, uint64_t seed,
                          int steps, const char* out_xyz_ab, const char* out_xyz_ba) {
    return guard([&] {
        require(m != nullptr && xyz_a != nullptr && xyz_b != nullptr && out_xyz_ab != nullptr &&
                    out_xyz_ba != nullptr,
                "all arguments must not be null");
        require(steps >= 1, "steps must be >= 1");
        mollae::Molecule a = load_one(xyz_a, m->impl->vocab());
        mollae::Molecule b = load_one(xyz_b, m->impl->vocab());
        mollae::Rng rng(seed);
        auto [ab, ba] = mollae::swap_latents(*m->impl, a, b, steps, rng);
        mollae::save_xyz(out_xyz_ab, {ab}, m->impl->vocab());
        mollae::save_xyz(out_xyz_ba, {ba}, m->impl->vocab());
    });
}

mollae_status mollae_blend(mollae_model* m, const char* xyz_a, const char* xyz_b, double lambda,
                           uint64_t seed, int steps, const char* out_xyz_path) {
    return guard([&] {
        require(m != nullptr && xyz_a != nullptr && xyz_b != nullptr && out_xyz_path != nullptr,
                "all arguments must not be null");
        require(steps >= 1, "steps must be >= 1");
        mollae::Molecule a = load_one(xyz_a, m->impl->vocab());
        mollae::Molecule b = load_one(xyz_b, m->impl->vocab());
        mollae::Rng rng(seed);
        mollae::Molecule out = mollae::blend(*m->impl, a, b, lambda, steps, rng);
        mollae::save_xyz(out_xyz_path, {out}, m->impl->vocab());
    });
}

mollae_status mollae_interpolate(mollae_model* m, const char* xyz_a, const char* xyz_b, int points,
                                 uint64_t seed, int steps, const char* out_dir,
                                 char** out_trend_csv) {
    return guard([&] {
        require(m != nullptr && xyz_a != nullptr && xyz_b != nullptr && out_dir != nullptr,
                "model, inputs and out_dir must not be null");
        require(points >= 2, "points must be >= 2");
        require(steps >= 1, "steps must be >= 1");
        const mollae::AtomVocabulary& vocab = m->impl->vocab();
        mollae::Molecule a = load_one(xyz_a, vocab);
        mollae::Molecule b = load_one(xyz_b, vocab);
        mollae::Rng rng(seed);
        std::vector<mollae::Molecule> frames = mollae::interpolate(*m->impl, a, b, points, steps, rng);

        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);
        mollae::LatentCode za = mollae::encode_means(*m->impl, a);
        mollae::LatentCode zb = mollae::encode_means(*m->impl, b);
        const std::string endpoints_checksum =
            mollae::latent_checksum(za.z_x, za.z_h) + "+" + mollae::latent_checksum(zb.z_x, zb.z_h);

        struct Prop {
            const char* name;
            std::vector<double> values;
        };
        std::vector<Prop> props{{"n_atoms", {}}, {"heavy_atoms", {}}, {"r_gyr", {}}, {"sp3_frac", {}}};
        std::string prop_csv = "index,lambda,n_atoms,heavy_atoms,r_gyr,sp3_frac\n";
        for (int j = 0; j < points; ++j) {
            const double lambda = static_cast<double>(j) / static_cast<double>(points - 1);
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03d.xyz", j);
            mollae::save_xyz((dir / name).string(), {frames[static_cast<std::size_t>(j)]}, vocab);
            std::snprintf(name, sizeof(name), "frame_%03d.json", j);
            mollae::write_json_file((dir / name).string(),
                                    mollae::manipulation_sidecar("interpolate", lambda, seed, endpoints_checksum));
            const mollae::Molecule& f = frames[static_cast<std::size_t>(j)];
            const double vals[4] = {static_cast<double>(f.size()),
                                    static_cast<double>(mollae::heavy_atom_count(f, vocab)),
                                    mollae::radius_of_gyration(f), mollae::sp3_fraction(f, vocab)};
            for (int p = 0; p < 4; ++p) props[static_cast<std::size_t>(p)].values.push_back(vals[p]);
            char row[160];
            std::snprintf(row, sizeof(row), "%d,%.6f,%.0f,%.0f,%.6f,%.6f\n", j, lambda, vals[0], vals[1],
                          vals[2], vals[3]);
            prop_csv += row;
        }

        std::string trend_csv = "property,sign,pearson_r,neg_log_p\n";
        for (const Prop& p : props) {
            const int sign = p.values.back() >= p.values.front() ? 1 : -1;
            char row[160];
            try {
                mollae::TrendReport rep = mollae::pearson_trend(p.values, sign);
                std::snprintf(row, sizeof(row), "%s,%+d,%.9f,%.6f\n", p.name, sign, rep.pearson_r,
                              rep.neg_log_p);
            } catch (const std::exception&) {
                std::snprintf(row, sizeof(row), "%s,%+d,n/a,n/a\n", p.name, sign);
            }
            trend_csv += row;
        }

        auto dump = [](const std::filesystem::path& path, const std::string& text) {
            std::ofstream out(path);
            if (!out) throw std::runtime_error("cannot write " + path.string());
            out << text;
        };
        dump(dir / "properties.csv", prop_csv);
        dump(dir / "trend.csv", trend_csv);
        if (out_trend_csv != nullptr) *out_trend_csv = dup_string(trend_csv);
    });
}

mollae_status mollae_align(mollae_model* m, const char* xyz_a, const char* xyz_b,
                           const char* out_xyz_a_aligned, char** out_transform_json) {
    return guard([&] {
        require(m != nullptr && xyz_a != nullptr && xyz_b != nullptr, "model and inputs must not be null");
        mollae::Molecule a = load_one(xyz_a, m->impl->vocab());
        mollae::Molecule b = load_one(xyz_b, m->impl->vocab());
        mollae::RigidTransform tf = mollae::latent_align(*m->impl, a, b);
        if (out_xyz_a_aligned != nullptr) {
            mollae::Molecule moved = a;
            moved.coords = mollae::apply(tf, mollae::center(a).coords);
            mollae::save_xyz(out_xyz_a_aligned, {moved}, m->impl->vocab());
        }
        if (out_transform_json != nullptr) {
            nlohmann::json j;
            j["rotation"] = mollae::matrix_to_json(tf.R);
            j["translation"] = {tf.t(0), tf.t(1), tf.t(2)};
            *out_transform_json = dup_string(j.dump(2));
        }
    });
}

mollae_status mollae_eval(const char* xyz_path, const char* vocab_spec, const char* train_xyz_path,
                          char** out_csv) {
    return guard([&] {
        require(xyz_path != nullptr && out_csv != nullptr, "xyz_path and out_csv must not be null");
        mollae::AtomVocabulary vocab =
            mollae::vocab_from_spec(vocab_spec != nullptr && vocab_spec[0] != '\0' ? vocab_spec : "qm9");
        std::vector<mollae::Molecule> mols = mollae::load_xyz(xyz_path, vocab);
        std::vector<std::uint64_t> train_hashes;
        const std::vector<std::uint64_t>* train_ptr = nullptr;
        if (train_xyz_path != nullptr && train_xyz_path[0] != '\0') {
            for (const mollae::Molecule& t : mollae::load_xyz(train_xyz_path, vocab))
                train_hashes.push_back(mollae::canonical_hash(t, vocab));
            train_ptr = &train_hashes;
        }
        *out_csv = dup_string(mollae::metrics_csv(mollae::evaluate_batch(mols, vocab, train_ptr)));
    });
}

}  // extern "C"
