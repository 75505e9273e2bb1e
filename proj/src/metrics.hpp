#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moldata.hpp"

namespace mollae {

struct BondGraph {
    Eigen::MatrixXi order;  // symmetric, zero diagonal, entries 0-3

    Eigen::Index size() const { return order.rows(); }
    int valence_sum(Eigen::Index i) const { return order.row(i).sum(); }
};

// Distance-lookup bond typing: a pair gets the highest order whose reference
// length (pm) exceeds the observed distance minus the per-order margin.
BondGraph infer_bonds(const Molecule& mol, const AtomVocabulary& vocab);

bool atom_is_stable(const Molecule& mol, const BondGraph& bonds, const AtomVocabulary& vocab, Eigen::Index i);
double atom_stability(const Molecule& mol, const AtomVocabulary& vocab);
bool mol_stability(const Molecule& mol, const AtomVocabulary& vocab);

// Valid = every valence allowed AND the bond graph is connected.
bool validity(const Molecule& mol, const AtomVocabulary& vocab);

// Order-independent canonical hash: 8 rounds of neighborhood refinement over
// (element, sorted (bond order, neighbor label) multiset).
std::uint64_t canonical_hash(const Molecule& mol, const AtomVocabulary& vocab);

double uniqueness(const std::vector<Molecule>& mols, const AtomVocabulary& vocab);
double novelty(const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
               const std::vector<std::uint64_t>& train_hashes);

// In-situ Gaussian-volume Tanimoto over heavy atoms; no alignment, so it is
// deliberately sensitive to orientation and position.
double shape_similarity(const Molecule& a, const Molecule& b, const AtomVocabulary& vocab);

double similarity_preference(double s_t, double s_s);

// Radius-2 neighborhood-hash fingerprint Tanimoto (pluggable stand-in for
// external fingerprint similarities).
double fingerprint_similarity(const Molecule& a, const Molecule& b, const AtomVocabulary& vocab);

double sp3_fraction(const Molecule& mol, const AtomVocabulary& vocab);
double radius_of_gyration(const Molecule& mol);
int heavy_atom_count(const Molecule& mol, const AtomVocabulary& vocab);

struct TrendReport {
    double pearson_r = 0.0;
    double neg_log_p = 0.0;  // -log10 p, capped
};

// Pearson correlation of values against sign*index with a two-sided t-test
// (n-2 dof) via the regularized incomplete beta function.
TrendReport pearson_trend(const std::vector<double>& values, int sign, double neg_log_cap = 300.0);

double regularized_incomplete_beta(double a, double b, double x);

struct BatchMetrics {
    std::size_t count = 0;
    double atom_stability = 0.0;   // mean over molecules
    double mol_stability = 0.0;    // fraction
    double validity = 0.0;         // fraction
    double uniqueness = 0.0;       // distinct hashes / valid count
    double novelty = -1.0;         // -1 when no training hashes supplied
};

BatchMetrics evaluate_batch(const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
                            const std::vector<std::uint64_t>* train_hashes = nullptr);
std::string metrics_csv(const BatchMetrics& m);

// External similarity table: CSV rows "id_a,id_b,value".
struct SimilarityRecord {
    std::string id_a, id_b;
    double value;
};
std::vector<SimilarityRecord> load_similarity_csv(const std::string& path);

}  // namespace mollae
