#include "jsonio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "version.hpp"

namespace mollae {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw std::runtime_error("expected a non-empty array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw std::runtime_error("ragged matrix rows in JSON input");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

nlohmann::json latent_record_json(const LatentPosterior& post, int n_atoms, const std::string& checkpoint_hash) {
    nlohmann::json j;
    j["z_x"] = matrix_to_json(post.mu_x);
    j["mu_h"] = matrix_to_json(post.mu_h);
    j["sigma2_x"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < post.sigma2_x.size(); ++i) j["sigma2_x"].push_back(post.sigma2_x(i));
    j["sigma2_h"] = matrix_to_json(post.sigma2_h);
    j["n_atoms"] = n_atoms;
    j["checkpoint_hash"] = checkpoint_hash;
    return j;
}

LatentRecord parse_latent_record(const nlohmann::json& j) {
    LatentRecord rec;
    rec.post.mu_x = matrix_from_json(j.at("z_x"));
    rec.post.mu_h = matrix_from_json(j.at("mu_h"));
    const auto& sx = j.at("sigma2_x");
    rec.post.sigma2_x = Eigen::VectorXd(static_cast<Eigen::Index>(sx.size()));
    for (Eigen::Index i = 0; i < rec.post.sigma2_x.size(); ++i)
        rec.post.sigma2_x(i) = sx[static_cast<std::size_t>(i)].get<double>();
    rec.post.sigma2_h = matrix_from_json(j.at("sigma2_h"));
    rec.n_atoms = j.at("n_atoms").get<int>();
    rec.checkpoint_hash = j.value("checkpoint_hash", std::string());
    if (rec.post.mu_x.cols() != 3) throw std::runtime_error("latent record: z_x must have 3 columns");
    if (rec.post.mu_x.rows() != rec.post.mu_h.rows() || rec.post.mu_x.rows() != rec.post.sigma2_x.size() ||
        rec.post.mu_h.rows() != rec.post.sigma2_h.rows() || rec.post.mu_h.cols() != rec.post.sigma2_h.cols())
        throw std::runtime_error("latent record: inconsistent latent shapes");
    if (rec.n_atoms < 1) throw std::runtime_error("latent record: n_atoms must be positive");
    return rec;
}

std::string latent_checksum(const Eigen::MatrixXd& z_x, const Eigen::MatrixXd& z_h) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const Eigen::MatrixXd& m) {
        char buf[64];
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const int n = std::snprintf(buf, sizeof(buf), "%.17g,", m(i, j));
                for (int c = 0; c < n; ++c) {
                    h ^= static_cast<unsigned char>(buf[c]);
                    h *= 0x100000001b3ULL;
                }
            }
    };
    feed(z_x);
    feed(z_h);
    char out[32];
    std::snprintf(out, sizeof(out), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return out;
}

nlohmann::json manipulation_sidecar(const std::string& op, double lambda, std::uint64_t seed,
                                    const std::string& latent_checksum) {
    nlohmann::json j;
    j["op"] = op;
    j["lambda"] = lambda;
    j["seed"] = seed;
    j["latent_checksum"] = latent_checksum;
    return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

void write_run_manifest(const std::string& out_dir, const std::string& resolved_config,
                        std::uint64_t seed, const std::string& checkpoint_hash,
                        const nlohmann::json& extra) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["checkpoint_hash"] = checkpoint_hash;
    j["resolved_config"] = resolved_config;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_json_file((std::filesystem::path(out_dir) / "run_manifest.json").string(), j);
}

}  // namespace mollae
