#include "moldata.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mollae {

const std::string& ChemTables::default_text() {
    static const std::string text = R"TBL(format chem-tables 1
# reference covalent bond lengths (picometers) and per-order detection margins,
# with allowed valences per element
margin 1 10
margin 2 5
margin 3 3
valence H 1
valence C 4
valence N 3
valence O 2
valence F 1
valence B 3
valence Al 3
valence Si 4
valence P 3 5
valence S 4
valence Cl 1
valence As 3
valence Br 1
valence I 1
bond 1 H H 74
bond 1 H C 109
bond 1 H N 101
bond 1 H O 96
bond 1 H F 92
bond 1 H B 119
bond 1 H Si 148
bond 1 H P 144
bond 1 H As 152
bond 1 H S 134
bond 1 H Cl 127
bond 1 H Br 141
bond 1 H I 161
bond 1 C C 154
bond 1 C N 147
bond 1 C O 143
bond 1 C F 135
bond 1 C Si 185
bond 1 C P 184
bond 1 C S 182
bond 1 C Cl 177
bond 1 C Br 194
bond 1 C I 214
bond 1 N N 145
bond 1 N O 140
bond 1 N F 136
bond 1 N Cl 175
bond 1 N Br 214
bond 1 N S 168
bond 1 N I 222
bond 1 N P 177
bond 1 O O 148
bond 1 O F 142
bond 1 O Br 172
bond 1 O S 151
bond 1 O P 163
bond 1 O Si 163
bond 1 O Cl 164
bond 1 O I 194
bond 1 F F 142
bond 1 F S 158
bond 1 F Si 160
bond 1 F Cl 166
bond 1 F Br 178
bond 1 F P 156
bond 1 F I 187
bond 1 B Cl 175
bond 1 Si Si 233
bond 1 Si Cl 202
bond 1 Si Br 215
bond 1 Si I 243
bond 1 Si S 200
bond 1 Cl Cl 199
bond 1 Cl P 203
bond 1 Cl S 207
bond 1 Cl Br 214
bond 1 S S 204
bond 1 S Br 225
bond 1 S P 210
bond 1 S I 234
bond 1 Br Br 228
bond 1 Br P 222
bond 1 P P 221
bond 1 I I 266
bond 2 C C 134
bond 2 C N 129
bond 2 C O 120
bond 2 C S 160
bond 2 N N 125
bond 2 N O 121
bond 2 O O 121
bond 2 O P 150
bond 2 P S 186
bond 3 C C 120
bond 3 C N 116
bond 3 C O 113
bond 3 N N 110
)TBL";
    return text;
}

std::string ChemTables::key(std::string a, std::string b, int order) {
    if (b < a) std::swap(a, b);
    return a + "|" + b + "|" + std::to_string(order);
}

ChemTables ChemTables::parse(const std::string& text) {
    ChemTables t;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string name;
            ls >> name >> t.version;
            if (name != "chem-tables" || t.version < 1)
                throw std::runtime_error("chem tables: bad format header at line " + std::to_string(lineno));
            saw_header = true;
        } else if (tag == "margin") {
            int order;
            double pm;
            if (!(ls >> order >> pm) || order < 1 || order > 3)
                throw std::runtime_error("chem tables: bad margin at line " + std::to_string(lineno));
            t.margin_pm[order] = pm;
        } else if (tag == "valence") {
            std::string sym;
            ls >> sym;
            std::vector<int> vs;
            int v;
            while (ls >> v) vs.push_back(v);
            if (sym.empty() || vs.empty())
                throw std::runtime_error("chem tables: bad valence at line " + std::to_string(lineno));
            t.valences[sym] = vs;
        } else if (tag == "bond") {
            int order;
            std::string a, b;
            double pm;
            if (!(ls >> order >> a >> b >> pm))
                throw std::runtime_error("chem tables: bad bond at line " + std::to_string(lineno));
            t.bond_pm[key(a, b, order)] = pm;
        } else {
            throw std::runtime_error("chem tables: unknown tag '" + tag + "' at line " + std::to_string(lineno));
        }
    }
    if (!saw_header) throw std::runtime_error("chem tables: missing format header");
    return t;
}

const ChemTables& ChemTables::builtin() {
    static const ChemTables t = parse(default_text());
    return t;
}

double ChemTables::bond_ref_pm(const std::string& a, const std::string& b, int order) const {
    auto it = bond_pm.find(key(a, b, order));
    return it == bond_pm.end() ? -1.0 : it->second;
}

int AtomVocabulary::index(const std::string& sym) const {
    auto it = index_of.find(sym);
    return it == index_of.end() ? -1 : it->second;
}

const std::vector<int>& AtomVocabulary::valences(int type) const {
    static const std::vector<int> none;
    auto it = tables->valences.find(symbol(type));
    return it == tables->valences.end() ? none : it->second;
}

double AtomVocabulary::bond_ref_pm(int a, int b, int order) const {
    return tables->bond_ref_pm(symbol(a), symbol(b), order);
}

AtomVocabulary AtomVocabulary::from_symbols(const std::vector<std::string>& syms) {
    if (syms.size() < 2) throw std::runtime_error("vocabulary needs at least 2 symbols");
    AtomVocabulary v;
    v.symbols = syms;
    v.tables = &ChemTables::builtin();
    for (std::size_t i = 0; i < syms.size(); ++i) {
        if (v.index_of.count(syms[i])) throw std::runtime_error("duplicate vocabulary symbol " + syms[i]);
        v.index_of[syms[i]] = static_cast<int>(i);
    }
    return v;
}

AtomVocabulary AtomVocabulary::qm9() { return from_symbols({"H", "C", "N", "O", "F"}); }

AtomVocabulary AtomVocabulary::drugs() {
    return from_symbols({"C", "N", "O", "F", "P", "S", "Cl", "Br", "I"});
}

Molecule center(const Molecule& m) {
    Molecule out = m;
    if (out.coords.rows() > 0) out.coords.rowwise() -= m.coords.colwise().mean();
    return out;
}

Eigen::MatrixXd one_hot(const Molecule& m, const AtomVocabulary& vocab) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(m.size(), vocab.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        int t = m.types[static_cast<std::size_t>(i)];
        if (t < 0 || t >= vocab.size()) throw std::runtime_error("atom type index out of range");
        e(i, t) = 1.0;
    }
    return e;
}

std::vector<Molecule> load_xyz(const std::string& path, const AtomVocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open xyz file: " + path);
    std::vector<Molecule> mols;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // tolerate blank separator lines between blocks
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::size_t pos = 0;
        long n = 0;
        try {
            n = std::stol(line, &pos);
        } catch (const std::exception&) {
            throw std::runtime_error("xyz line " + std::to_string(lineno) + ": malformed atom-count line '" + line + "'");
        }
        if (n < 1 || line.find_first_not_of(" \t\r", pos) != std::string::npos)
            throw std::runtime_error("xyz line " + std::to_string(lineno) + ": malformed atom-count line '" + line + "'");
        if (!std::getline(in, line))
            throw std::runtime_error("xyz line " + std::to_string(lineno) + ": missing comment line");
        ++lineno;
        Molecule m;
        m.coords.resize(n, 3);
        m.types.resize(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) {
            if (!std::getline(in, line))
                throw std::runtime_error("xyz line " + std::to_string(lineno) + ": unexpected end of file inside block");
            ++lineno;
            std::istringstream ls(line);
            std::string sym;
            double x, y, z;
            if (!(ls >> sym))
                throw std::runtime_error("xyz line " + std::to_string(lineno) + ": empty atom line");
            int t = vocab.index(sym);
            if (t < 0)
                throw std::runtime_error("xyz line " + std::to_string(lineno) + ": unknown element symbol '" + sym + "'");
            if (!(ls >> x >> y >> z))
                throw std::runtime_error("xyz line " + std::to_string(lineno) + ": non-numeric coordinate");
            m.types[static_cast<std::size_t>(i)] = t;
            m.coords(i, 0) = x;
            m.coords(i, 1) = y;
            m.coords(i, 2) = z;
        }
        mols.push_back(std::move(m));
    }
    return mols;
}

void save_xyz(const std::string& path, const std::vector<Molecule>& mols, const AtomVocabulary& vocab,
              const std::vector<std::string>* comments) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write xyz file: " + path);
    char buf[160];
    for (std::size_t mi = 0; mi < mols.size(); ++mi) {
        const Molecule& m = mols[mi];
        out << m.size() << "\n";
        if (comments && mi < comments->size()) out << (*comments)[mi];
        out << "\n";
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s %.10f %.10f %.10f\n",
                          vocab.symbol(m.types[static_cast<std::size_t>(i)]).c_str(), m.coords(i, 0),
                          m.coords(i, 1), m.coords(i, 2));
            out << buf;
        }
    }
}

AtomCountPrior AtomCountPrior::fit(const std::vector<Molecule>& dataset) {
    if (dataset.empty()) throw std::runtime_error("atom-count prior: empty dataset");
    std::map<int, int> counts;
    for (const Molecule& m : dataset) counts[static_cast<int>(m.size())]++;
    AtomCountPrior p;
    double total = static_cast<double>(dataset.size());
    for (const auto& [n, c] : counts) p.probs.emplace_back(n, static_cast<double>(c) / total);
    return p;
}

int AtomCountPrior::sample(Rng& rng) const {
    double u = rng.uniform();
    double acc = 0.0;
    for (const auto& [n, pr] : probs) {
        acc += pr;
        if (u < acc) return n;
    }
    return probs.back().first;
}

double AtomCountPrior::prob_of(int n) const {
    for (const auto& [k, pr] : probs)
        if (k == n) return pr;
    return 0.0;
}

std::string AtomCountPrior::serialize() const {
    std::string s;
    char buf[64];
    for (const auto& [n, pr] : probs) {
        std::snprintf(buf, sizeof(buf), "%d:%.17g ", n, pr);
        s += buf;
    }
    if (!s.empty()) s.pop_back();
    return s;
}

AtomCountPrior AtomCountPrior::parse(const std::string& text) {
    AtomCountPrior p;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        auto c = tok.find(':');
        if (c == std::string::npos) throw std::runtime_error("atom-count prior: bad token " + tok);
        p.probs.emplace_back(std::stoi(tok.substr(0, c)), std::stod(tok.substr(c + 1)));
    }
    if (p.probs.empty()) throw std::runtime_error("atom-count prior: empty serialization");
    return p;
}

}  // namespace mollae
