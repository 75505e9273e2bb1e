#pragma once

#include <cstdint>
#include <string>

#include "encoder.hpp"
#include "json.hpp"

namespace mollae {

// Latent record exchanged by `encode`/`decode`: posterior parameters plus the
// source atom count and checkpoint identity, so external tooling can do
// latent arithmetic and feed results back in.
struct LatentRecord {
    LatentPosterior post;
    int n_atoms = 0;
    std::string checkpoint_hash;
};

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json latent_record_json(const LatentPosterior& post, int n_atoms, const std::string& checkpoint_hash);
LatentRecord parse_latent_record(const nlohmann::json& j);

std::string latent_checksum(const Eigen::MatrixXd& z_x, const Eigen::MatrixXd& z_h);

// Per-output provenance sidecar for manipulation results.
nlohmann::json manipulation_sidecar(const std::string& op, double lambda, std::uint64_t seed,
                                    const std::string& latent_checksum);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

// Every output directory gets a manifest sufficient to re-run bit-identically.
void write_run_manifest(const std::string& out_dir, const std::string& resolved_config,
                        std::uint64_t seed, const std::string& checkpoint_hash,
                        const nlohmann::json& extra = nlohmann::json::object());

}  // namespace mollae
