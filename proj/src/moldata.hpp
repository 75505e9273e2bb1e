#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"

namespace mollae {

// Reference bond lengths (pm), detection margins, and allowed valences,
// parsed from a versioned plain-text table.
struct ChemTables {
    int version = 0;
    std::map<std::string, std::vector<int>> valences;
    std::map<std::string, double> bond_pm;  // key "A|B|order", symbols sorted
    double margin_pm[4] = {0, 10, 5, 3};    // indexed by bond order

    static const std::string& default_text();
    static ChemTables parse(const std::string& text);
    static const ChemTables& builtin();

    // Reference length in pm for (a, b, order); negative when unknown.
    double bond_ref_pm(const std::string& a, const std::string& b, int order) const;
    static std::string key(std::string a, std::string b, int order);
};

struct AtomVocabulary {
    std::vector<std::string> symbols;
    std::unordered_map<std::string, int> index_of;
    const ChemTables* tables = nullptr;

    int size() const { return static_cast<int>(symbols.size()); }
    int index(const std::string& sym) const;  // -1 when absent
    const std::string& symbol(int i) const { return symbols.at(static_cast<std::size_t>(i)); }
    const std::vector<int>& valences(int type) const;
    double bond_ref_pm(int a, int b, int order) const;

    static AtomVocabulary from_symbols(const std::vector<std::string>& syms);
    static AtomVocabulary qm9();    // H C N O F
    static AtomVocabulary drugs();  // heavy-atom set for drug-like corpora
};

struct Molecule {
    Eigen::MatrixXd coords;  // N x 3, Å
    std::vector<int> types;  // indices into a vocabulary

    Eigen::Index size() const { return coords.rows(); }
};

Molecule center(const Molecule& m);
Eigen::MatrixXd one_hot(const Molecule& m, const AtomVocabulary& vocab);

std::vector<Molecule> load_xyz(const std::string& path, const AtomVocabulary& vocab);
void save_xyz(const std::string& path, const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
              const std::vector<std::string>* comments = nullptr);

// Empirical distribution over atom counts, fit on a training corpus.
struct AtomCountPrior {
    std::vector<std::pair<int, double>> probs;  // (count, probability), ascending count

    static AtomCountPrior fit(const std::vector<Molecule>& dataset);
    int sample(Rng& rng) const;
    double prob_of(int n) const;

    std::string serialize() const;  // "n:p n:p ..." with %.17g probabilities
    static AtomCountPrior parse(const std::string& text);
};

}  // namespace mollae
