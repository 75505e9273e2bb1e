#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mollae {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

std::uint64_t hash_str(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Per-atom labels after `rounds` sweeps of neighborhood refinement.
std::vector<std::uint64_t> refine_labels(const Molecule& mol, const BondGraph& bonds,
                                         const AtomVocabulary& vocab, int rounds) {
    const Eigen::Index n = mol.size();
    std::vector<std::uint64_t> label(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        label[static_cast<std::size_t>(i)] = mix64(hash_str(vocab.symbols[static_cast<std::size_t>(mol.types[static_cast<std::size_t>(i)])]));
    std::vector<std::uint64_t> next(label.size());
    for (int r = 0; r < rounds; ++r) {
        for (Eigen::Index i = 0; i < n; ++i) {
            std::vector<std::pair<int, std::uint64_t>> env;
            for (Eigen::Index j = 0; j < n; ++j) {
                const int o = bonds.order(i, j);
                if (o > 0) env.emplace_back(o, label[static_cast<std::size_t>(j)]);
            }
            std::sort(env.begin(), env.end());
            std::uint64_t h = label[static_cast<std::size_t>(i)];
            for (const auto& [o, lj] : env) h = hash_combine(hash_combine(h, static_cast<std::uint64_t>(o)), lj);
            next[static_cast<std::size_t>(i)] = mix64(h);
        }
        label.swap(next);
    }
    return label;
}

bool connected(const BondGraph& bonds) {
    const Eigen::Index n = bonds.size();
    if (n <= 1) return true;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    Eigen::Index reached = 1;
    while (!stack.empty()) {
        const Eigen::Index i = stack.back();
        stack.pop_back();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (bonds.order(i, j) > 0 && !seen[static_cast<std::size_t>(j)]) {
                seen[static_cast<std::size_t>(j)] = 1;
                ++reached;
                stack.push_back(j);
            }
        }
    }
    return reached == n;
}

// Continued fraction for the incomplete beta function (modified Lentz).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

double gaussian_volume_overlap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double amp = std::pow(M_PI, 1.5);
    double v = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            v += amp * std::exp(-0.25 * (a.row(i) - b.row(j)).squaredNorm());
    return v;
}

Eigen::MatrixXd heavy_coords(const Molecule& mol, const AtomVocabulary& vocab) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < mol.size(); ++i)
        if (vocab.symbols[static_cast<std::size_t>(mol.types[static_cast<std::size_t>(i)])] != "H")
            keep.push_back(i);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), 3);
    for (std::size_t r = 0; r < keep.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = mol.coords.row(keep[r]);
    return out;
}

}  // namespace

BondGraph infer_bonds(const Molecule& mol, const AtomVocabulary& vocab) {
    const Eigen::Index n = mol.size();
    BondGraph g;
    g.order = Eigen::MatrixXi::Zero(n, n);
    std::set<std::pair<int, int>> warned;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const int ti = mol.types[static_cast<std::size_t>(i)], tj = mol.types[static_cast<std::size_t>(j)];
            const double d_pm = (mol.coords.row(i) - mol.coords.row(j)).norm() * 100.0;
            int assigned = 0;
            bool any_ref = false;
            for (int order = 3; order >= 1; --order) {
                const double ref = vocab.bond_ref_pm(ti, tj, order);
                if (ref < 0.0) continue;
                any_ref = true;
                if (d_pm < ref + vocab.tables->margin_pm[order]) {
                    assigned = order;
                    break;
                }
            }
            if (!any_ref) {
                auto key = std::minmax(ti, tj);
                if (warned.insert(key).second)
                    std::cerr << "warning: no bond-length reference for element pair "
                              << vocab.symbols[static_cast<std::size_t>(key.first)] << "-"
                              << vocab.symbols[static_cast<std::size_t>(key.second)] << "; treating as unbonded\n";
            }
            g.order(i, j) = assigned;
            g.order(j, i) = assigned;
        }
    }
    return g;
}

bool atom_is_stable(const Molecule& mol, const BondGraph& bonds, const AtomVocabulary& vocab, Eigen::Index i) {
    const int v = bonds.valence_sum(i);
    for (int allowed : vocab.valences(mol.types[static_cast<std::size_t>(i)]))
        if (v == allowed) return true;
    return false;
}

double atom_stability(const Molecule& mol, const AtomVocabulary& vocab) {
    if (mol.size() == 0) return 0.0;
    const BondGraph bonds = infer_bonds(mol, vocab);
    Eigen::Index stable = 0;
    for (Eigen::Index i = 0; i < mol.size(); ++i)
        if (atom_is_stable(mol, bonds, vocab, i)) ++stable;
    return static_cast<double>(stable) / static_cast<double>(mol.size());
}

bool mol_stability(const Molecule& mol, const AtomVocabulary& vocab) {
    if (mol.size() == 0) return false;
    const BondGraph bonds = infer_bonds(mol, vocab);
    for (Eigen::Index i = 0; i < mol.size(); ++i)
        if (!atom_is_stable(mol, bonds, vocab, i)) return false;
    return true;
}

bool validity(const Molecule& mol, const AtomVocabulary& vocab) {
    if (mol.size() == 0) return false;
    const BondGraph bonds = infer_bonds(mol, vocab);
    if (!connected(bonds)) return false;
    for (Eigen::Index i = 0; i < mol.size(); ++i)
        if (!atom_is_stable(mol, bonds, vocab, i)) return false;
    return true;
}

std::uint64_t canonical_hash(const Molecule& mol, const AtomVocabulary& vocab) {
    const BondGraph bonds = infer_bonds(mol, vocab);
    std::vector<std::uint64_t> label = refine_labels(mol, bonds, vocab, 8);
    std::sort(label.begin(), label.end());
    std::uint64_t h = mix64(static_cast<std::uint64_t>(mol.size()));
    for (std::uint64_t l : label) h = hash_combine(h, l);
    return h;
}

double uniqueness(const std::vector<Molecule>& mols, const AtomVocabulary& vocab) {
    std::unordered_set<std::uint64_t> hashes;
    std::size_t valid_count = 0;
    for (const auto& m : mols) {
        if (!validity(m, vocab)) continue;
        ++valid_count;
        hashes.insert(canonical_hash(m, vocab));
    }
    if (valid_count == 0) return 0.0;
    return static_cast<double>(hashes.size()) / static_cast<double>(valid_count);
}

double novelty(const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
               const std::vector<std::uint64_t>& train_hashes) {
    const std::unordered_set<std::uint64_t> train(train_hashes.begin(), train_hashes.end());
    std::unordered_set<std::uint64_t> hashes;
    for (const auto& m : mols)
        if (validity(m, vocab)) hashes.insert(canonical_hash(m, vocab));
    if (hashes.empty()) return 0.0;
    std::size_t novel = 0;
    for (std::uint64_t h : hashes)
        if (!train.count(h)) ++novel;
    return static_cast<double>(novel) / static_cast<double>(hashes.size());
}

double shape_similarity(const Molecule& a, const Molecule& b, const AtomVocabulary& vocab) {
    const Eigen::MatrixXd ha = heavy_coords(a, vocab), hb = heavy_coords(b, vocab);
    if (ha.rows() == 0 || hb.rows() == 0)
        throw std::runtime_error("shape_similarity: molecule has no heavy atoms");
    const double vab = gaussian_volume_overlap(ha, hb);
    const double vaa = gaussian_volume_overlap(ha, ha);
    const double vbb = gaussian_volume_overlap(hb, hb);
    return vab / (vaa + vbb - vab);
}

double similarity_preference(double s_t, double s_s) {
    const double denom = s_t + s_s;
    if (denom <= 0.0) throw std::runtime_error("similarity_preference: s_t + s_s must be positive");
    return (s_t - s_s) / denom;
}

double fingerprint_similarity(const Molecule& a, const Molecule& b, const AtomVocabulary& vocab) {
    auto fingerprint = [&vocab](const Molecule& m) {
        const BondGraph bonds = infer_bonds(m, vocab);
        std::unordered_set<std::uint64_t> bits;
        for (int radius = 0; radius <= 2; ++radius)
            for (std::uint64_t l : refine_labels(m, bonds, vocab, radius)) bits.insert(l);
        return bits;
    };
    const auto fa = fingerprint(a), fb = fingerprint(b);
    std::size_t inter = 0;
    for (std::uint64_t bit : fa)
        if (fb.count(bit)) ++inter;
    const std::size_t uni = fa.size() + fb.size() - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double sp3_fraction(const Molecule& mol, const AtomVocabulary& vocab) {
    const BondGraph bonds = infer_bonds(mol, vocab);
    int carbons = 0, sp3 = 0;
    for (Eigen::Index i = 0; i < mol.size(); ++i) {
        if (vocab.symbols[static_cast<std::size_t>(mol.types[static_cast<std::size_t>(i)])] != "C") continue;
        ++carbons;
        int singles = 0;
        bool only_singles = true;
        for (Eigen::Index j = 0; j < mol.size(); ++j) {
            const int o = bonds.order(i, j);
            if (o == 1) ++singles;
            else if (o > 1) only_singles = false;
        }
        if (only_singles && singles == 4) ++sp3;
    }
    if (carbons == 0) {
        std::cerr << "warning: sp3_fraction on carbon-free molecule; returning 0\n";
        return 0.0;
    }
    return static_cast<double>(sp3) / static_cast<double>(carbons);
}

double radius_of_gyration(const Molecule& mol) {
    if (mol.size() == 0) return 0.0;
    const Eigen::RowVector3d c = mol.coords.colwise().mean();
    double s = 0.0;
    for (Eigen::Index i = 0; i < mol.size(); ++i) s += (mol.coords.row(i) - c).squaredNorm();
    return std::sqrt(s / static_cast<double>(mol.size()));
}

int heavy_atom_count(const Molecule& mol, const AtomVocabulary& vocab) {
    int n = 0;
    for (int t : mol.types)
        if (vocab.symbols[static_cast<std::size_t>(t)] != "H") ++n;
    return n;
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

TrendReport pearson_trend(const std::vector<double>& values, int sign, double neg_log_cap) {
    const std::size_t n = values.size();
    if (n < 3) throw std::runtime_error("pearson_trend: need at least 3 points");
    if (sign != 1 && sign != -1) throw std::runtime_error("pearson_trend: sign must be +1 or -1");
    double mx = 0.0, mv = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mx += sign * static_cast<double>(k);
        mv += values[k];
    }
    mx /= static_cast<double>(n);
    mv /= static_cast<double>(n);
    double sxx = 0.0, svv = 0.0, sxv = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double dx = sign * static_cast<double>(k) - mx;
        const double dv = values[k] - mv;
        sxx += dx * dx;
        svv += dv * dv;
        sxv += dx * dv;
    }
    if (svv <= 0.0) throw std::runtime_error("pearson_trend: constant values give undefined correlation");
    TrendReport rep;
    rep.pearson_r = sxv / std::sqrt(sxx * svv);
    rep.pearson_r = std::clamp(rep.pearson_r, -1.0, 1.0);
    const double dof = static_cast<double>(n) - 2.0;
    const double r2 = rep.pearson_r * rep.pearson_r;
    double p;
    if (r2 >= 1.0) {
        p = 0.0;
    } else {
        const double t2 = r2 * dof / (1.0 - r2);
        p = regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t2));
    }
    rep.neg_log_p = (p <= 0.0) ? neg_log_cap : std::min(neg_log_cap, -std::log10(p));
    return rep;
}

BatchMetrics evaluate_batch(const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
                            const std::vector<std::uint64_t>* train_hashes) {
    BatchMetrics m;
    m.count = mols.size();
    if (mols.empty()) return m;
    std::size_t stable_mols = 0, valid_mols = 0;
    std::unordered_set<std::uint64_t> valid_hashes;
    double atom_sum = 0.0;
    for (const auto& mol : mols) {
        const BondGraph bonds = infer_bonds(mol, vocab);
        Eigen::Index stable = 0;
        bool all_stable = mol.size() > 0;
        for (Eigen::Index i = 0; i < mol.size(); ++i) {
            if (atom_is_stable(mol, bonds, vocab, i)) ++stable;
            else all_stable = false;
        }
        atom_sum += mol.size() > 0 ? static_cast<double>(stable) / static_cast<double>(mol.size()) : 0.0;
        if (all_stable) ++stable_mols;
        if (all_stable && connected(bonds)) {
            ++valid_mols;
            valid_hashes.insert(canonical_hash(mol, vocab));
        }
    }
    m.atom_stability = atom_sum / static_cast<double>(mols.size());
    m.mol_stability = static_cast<double>(stable_mols) / static_cast<double>(mols.size());
    m.validity = static_cast<double>(valid_mols) / static_cast<double>(mols.size());
    m.uniqueness = valid_mols > 0 ? static_cast<double>(valid_hashes.size()) / static_cast<double>(valid_mols) : 0.0;
    if (train_hashes != nullptr) {
        const std::unordered_set<std::uint64_t> train(train_hashes->begin(), train_hashes->end());
        if (!valid_hashes.empty()) {
            std::size_t novel = 0;
            for (std::uint64_t h : valid_hashes)
                if (!train.count(h)) ++novel;
            m.novelty = static_cast<double>(novel) / static_cast<double>(valid_hashes.size());
        } else {
            m.novelty = 0.0;
        }
    }
    return m;
}

std::string metrics_csv(const BatchMetrics& m) {
    std::ostringstream os;
    os << "count,atom_stability,mol_stability,validity,uniqueness,novelty\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,", m.count, m.atom_stability,
                  m.mol_stability, m.validity, m.uniqueness);
    os << buf;
    if (m.novelty >= 0.0) {
        std::snprintf(buf, sizeof(buf), "%.6f", m.novelty);
        os << buf;
    } else {
        os << "n/a";
    }
    os << "\n";
    return os.str();
}

std::vector<SimilarityRecord> load_similarity_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open similarity table: " + path);
    std::vector<SimilarityRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b, v;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, v))
            throw std::runtime_error("malformed similarity row at line " + std::to_string(lineno));
        try {
            out.push_back({a, b, std::stod(v)});
        } catch (const std::exception&) {
            if (lineno == 1) continue;  // header row
            throw std::runtime_error("non-numeric similarity value at line " + std::to_string(lineno));
        }
    }
    return out;
}

}  // namespace mollae
