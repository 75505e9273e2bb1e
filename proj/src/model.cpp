#include "model.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mollae {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool is_little_endian() {
    const std::uint32_t one = 1;
    unsigned char b;
    std::memcpy(&b, &one, 1);
    return b == 1;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return std::stoi(value); };
    if (key == "recon_weight") recon_weight = d();
    else if (key == "reg_weight") reg_weight = d();
    else if (key == "var_x") var_x = d();
    else if (key == "var_h") var_h = d();
    else if (key == "n_z") n_z = i();
    else if (key == "d_z") d_z = i();
    else if (key == "d_f") d_f = i();
    else if (key == "layers") layers = i();
    else if (key == "heads") heads = i();
    else if (key == "k") k = i();
    else if (key == "adam_beta1") adam_beta1 = d();
    else if (key == "adam_beta2") adam_beta2 = d();
    else if (key == "lr") lr = d();
    else if (key == "weight_decay") weight_decay = d();
    else if (key == "plateau_factor") plateau_factor = d();
    else if (key == "plateau_patience") plateau_patience = i();
    else if (key == "min_lr") min_lr = d();
    else if (key == "batch_size") batch_size = i();
    else if (key == "n_steps") n_steps = i();
    else if (key == "sigma1") sigma1 = d();
    else if (key == "beta1") beta1 = d();
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "train_steps") train_steps = i();
    else if (key == "val_fraction") val_fraction = d();
    else if (key == "val_every") val_every = i();
    else if (key == "activation") activation = value;
    else if (key == "attention") attention = (value == "1" || value == "true");
    else if (key == "vocab") vocab = value;
    else if (key == "threads") threads = i();
    else if (key == "rbf_bins") rbf_bins = i();
    else if (key == "rbf_max") rbf_max = d();
    else if (key == "gamma_formula") gamma_formula = value;
    else throw std::runtime_error("config: unknown key '" + key + "'");
}

std::string TrainConfig::serialize() const {
    std::ostringstream o;
    o << "recon_weight=" << fmt_double(recon_weight) << "\n";
    o << "reg_weight=" << fmt_double(reg_weight) << "\n";
    o << "var_x=" << fmt_double(var_x) << "\n";
    o << "var_h=" << fmt_double(var_h) << "\n";
    o << "n_z=" << n_z << "\n";
    o << "d_z=" << d_z << "\n";
    o << "d_f=" << d_f << "\n";
    o << "layers=" << layers << "\n";
    o << "heads=" << heads << "\n";
    o << "k=" << k << "\n";
    o << "adam_beta1=" << fmt_double(adam_beta1) << "\n";
    o << "adam_beta2=" << fmt_double(adam_beta2) << "\n";
    o << "lr=" << fmt_double(lr) << "\n";
    o << "weight_decay=" << fmt_double(weight_decay) << "\n";
    o << "plateau_factor=" << fmt_double(plateau_factor) << "\n";
    o << "plateau_patience=" << plateau_patience << "\n";
    o << "min_lr=" << fmt_double(min_lr) << "\n";
    o << "batch_size=" << batch_size << "\n";
    o << "n_steps=" << n_steps << "\n";
    o << "sigma1=" << fmt_double(sigma1) << "\n";
    o << "beta1=" << fmt_double(beta1) << "\n";
    o << "seed=" << seed << "\n";
    o << "train_steps=" << train_steps << "\n";
    o << "val_fraction=" << fmt_double(val_fraction) << "\n";
    o << "val_every=" << val_every << "\n";
    o << "activation=" << activation << "\n";
    o << "attention=" << (attention ? 1 : 0) << "\n";
    o << "vocab=" << vocab << "\n";
    o << "threads=" << threads << "\n";
    o << "rbf_bins=" << rbf_bins << "\n";
    o << "rbf_max=" << fmt_double(rbf_max) << "\n";
    o << "gamma_formula=" << gamma_formula << "\n";
    return o.str();
}

TrainConfig TrainConfig::parse_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(first, eq - first);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        std::string val = line.substr(eq + 1);
        std::size_t vs = val.find_first_not_of(" \t");
        val = vs == std::string::npos ? "" : val.substr(vs);
        while (!val.empty() && (val.back() == ' ' || val.back() == '\t')) val.pop_back();
        c.set(key, val);
    }
    return c;
}

TrainConfig TrainConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

void TrainConfig::validate() const {
    if (recon_weight < 0 || reg_weight < 0) throw std::runtime_error("config: loss weights must be >= 0");
    if (var_x <= 0 || var_h <= 0) throw std::runtime_error("config: prior variances must be positive");
    if (lr <= 0) throw std::runtime_error("config: lr must be positive");
    if (n_z < 4 || d_z < 1 || d_f < 1 || layers < 1 || heads < 1 || k < 1 || batch_size < 1 || n_steps < 1)
        throw std::runtime_error("config: counts must be >= 1 (and n_z >= 4)");
    if (sigma1 <= 0 || sigma1 >= 1) throw std::runtime_error("config: sigma1 must lie in (0,1)");
    if (beta1 <= 0) throw std::runtime_error("config: beta1 must be positive");
    if (gamma_formula != "gamma(t)=1-sigma1^(2t)")
        throw std::runtime_error("config: unsupported gamma_formula '" + gamma_formula + "'");
    if (activation != "silu" && activation != "relu")
        throw std::runtime_error("config: activation must be silu or relu");
}

AtomVocabulary vocab_from_spec(const std::string& spec) {
    if (spec == "qm9") return AtomVocabulary::qm9();
    if (spec == "drugs") return AtomVocabulary::drugs();
    std::vector<std::string> syms;
    std::string cur;
    for (char ch : spec) {
        if (ch == ',') {
            if (!cur.empty()) syms.push_back(cur);
            cur.clear();
        } else if (ch != ' ') {
            cur += ch;
        }
    }
    if (!cur.empty()) syms.push_back(cur);
    return AtomVocabulary::from_symbols(syms);
}

Model::Model(const TrainConfig& cfg, const AtomVocabulary& vocab) : cfg_(cfg), vocab_(vocab) {
    cfg_.validate();
    BackboneConfig bb;
    bb.layers = cfg.layers;
    bb.heads = cfg.heads;
    bb.k = cfg.k;
    bb.d_f = cfg.d_f;
    bb.attention = cfg.attention;
    bb.activation = cfg.activation;
    bb.rbf_bins = cfg.rbf_bins;
    bb.rbf_max = cfg.rbf_max;
    Rng init_rng(derive_seed(cfg.seed, 0x1017));
    EncoderConfig ec;
    ec.n_z = cfg.n_z;
    ec.d_z = cfg.d_z;
    ec.vocab_k = vocab.size();
    ec.backbone = bb;
    encoder_ = std::make_unique<Encoder>(ec, reg_, init_rng);
    DecoderConfig dc;
    dc.d_z = cfg.d_z;
    dc.vocab_k = vocab.size();
    dc.backbone = bb;
    decoder_ = std::make_unique<Decoder>(dc, reg_, init_rng);
    opt.lr_current = cfg.lr;
}

NoiseSchedule Model::schedule() const {
    NoiseSchedule s;
    s.sigma1 = cfg_.sigma1;
    s.beta1 = cfg_.beta1;
    s.n_steps = cfg_.n_steps;
    return s;
}

void Model::init_opt_state() {
    if (!opt.m.empty()) return;
    for (const auto& p : reg_.all()) {
        opt.m.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
        opt.v.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
}

namespace {

constexpr char kMagic[4] = {'M', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Header {
    std::uint32_t version;
    std::uint64_t manifest_offset;
    std::uint64_t meta_offset;
};

void write_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }

void write_blob(std::ostream& o, const Eigen::MatrixXd& m, const std::string& dtype) {
    if (dtype == "f64") {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = m(r, c);
                o.write(reinterpret_cast<const char*>(&v), 8);
            }
    } else {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                float v = static_cast<float>(m(r, c));
                o.write(reinterpret_cast<const char*>(&v), 4);
            }
    }
}

Eigen::MatrixXd read_blob(std::istream& in, std::uint64_t offset, const std::string& dtype, Eigen::Index rows,
                          Eigen::Index cols) {
    in.seekg(static_cast<std::streamoff>(offset));
    Eigen::MatrixXd m(rows, cols);
    if (dtype == "f64") {
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), 8);
                m(r, c) = v;
            }
    } else if (dtype == "f32") {
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                float v;
                in.read(reinterpret_cast<char*>(&v), 4);
                m(r, c) = static_cast<double>(v);
            }
    } else {
        throw std::runtime_error("checkpoint: unknown dtype " + dtype);
    }
    if (!in) throw std::runtime_error("checkpoint: truncated blob region");
    return m;
}

}  // namespace

void Model::save(const std::string& path, const std::string& dtype) const {
    if (!is_little_endian()) throw std::runtime_error("checkpoint: big-endian hosts unsupported");
    if (dtype != "f64" && dtype != "f32") throw std::runtime_error("checkpoint: dtype must be f64 or f32");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, 0);  // manifest offset placeholder
    write_u64(out, 0);  // meta offset placeholder

    std::size_t word = dtype == "f64" ? 8 : 4;
    std::ostringstream manifest;
    std::uint64_t offset = 24;
    auto emit = [&](const std::string& name, const Eigen::MatrixXd& m) {
        write_blob(out, m, dtype);
        manifest << name << " " << dtype << " " << m.rows() << " " << m.cols() << " " << offset << "\n";
        offset += static_cast<std::uint64_t>(m.size()) * word;
    };
    for (const auto& p : reg_.all()) emit(p->name, p->value);
    if (!opt.m.empty()) {
        const auto& params = reg_.all();
        for (std::size_t i = 0; i < params.size(); ++i) emit("opt.m." + params[i]->name, opt.m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) emit("opt.v." + params[i]->name, opt.v[i]);
    }

    std::uint64_t manifest_offset = offset;
    std::string mtext = manifest.str();
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    std::uint64_t meta_offset = manifest_offset + mtext.size();

    std::ostringstream meta;
    meta << "mollae-checkpoint 1\n";
    meta << "[CONFIG]\n" << cfg_.serialize();
    meta << "[VOCAB]\n";
    for (int i = 0; i < vocab_.size(); ++i) meta << (i ? " " : "") << vocab_.symbol(i);
    meta << "\n[PRIOR]\n" << (has_prior ? prior.serialize() : std::string("-")) << "\n";
    meta << "[COUNTERS]\n";
    meta << "step=" << step << "\n";
    meta << "epoch=" << epoch << "\n";
    meta << "adam_t=" << opt.t << "\n";
    meta << "lr_current=" << fmt_double(opt.lr_current == 0.0 ? cfg_.lr : opt.lr_current) << "\n";
    meta << "best_val=" << (opt.has_best ? fmt_double(opt.best_val) : std::string("-")) << "\n";
    meta << "plateau_bad=" << opt.plateau_bad << "\n";
    meta << "[END]\n";
    std::string metat = meta.str();
    out.write(metat.data(), static_cast<std::streamsize>(metat.size()));

    out.seekp(8);
    write_u64(out, manifest_offset);
    write_u64(out, meta_offset);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::unique_ptr<Model> Model::load(const std::string& path) {
    if (!is_little_endian()) throw std::runtime_error("checkpoint: big-endian hosts unsupported");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    std::uint32_t version;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t manifest_offset, meta_offset;
    in.read(reinterpret_cast<char*>(&manifest_offset), 8);
    in.read(reinterpret_cast<char*>(&meta_offset), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated header");

    in.seekg(0, std::ios::end);
    std::uint64_t fsize = static_cast<std::uint64_t>(in.tellg());
    if (manifest_offset > meta_offset || meta_offset > fsize) throw std::runtime_error("checkpoint: bad offsets");

    auto read_text = [&](std::uint64_t from, std::uint64_t to) {
        std::string s(to - from, '\0');
        in.seekg(static_cast<std::streamoff>(from));
        in.read(s.data(), static_cast<std::streamsize>(s.size()));
        if (!in) throw std::runtime_error("checkpoint: truncated text section");
        return s;
    };
    std::string manifest = read_text(manifest_offset, meta_offset);
    std::string meta = read_text(meta_offset, fsize);

    // ---- meta sections ----
    std::istringstream ms(meta);
    std::string line;
    if (!std::getline(ms, line) || line != "mollae-checkpoint 1")
        throw std::runtime_error("checkpoint: bad meta header");
    std::string section;
    std::string config_text, vocab_line, prior_line;
    long long step = 0, epoch = 0, adam_t = 0;
    double lr_current = 0.0, best_val = 0.0;
    bool has_best = false;
    int plateau_bad = 0;
    while (std::getline(ms, line)) {
        if (line == "[END]") break;
        if (!line.empty() && line.front() == '[') {
            section = line;
            continue;
        }
        if (section == "[CONFIG]") config_text += line + "\n";
        else if (section == "[VOCAB]") vocab_line = line;
        else if (section == "[PRIOR]") prior_line = line;
        else if (section == "[COUNTERS]") {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string k = line.substr(0, eq), v = line.substr(eq + 1);
            if (k == "step") step = std::stoll(v);
            else if (k == "epoch") epoch = std::stoll(v);
            else if (k == "adam_t") adam_t = std::stoll(v);
            else if (k == "lr_current") lr_current = std::stod(v);
            else if (k == "best_val" && v != "-") { best_val = std::stod(v); has_best = true; }
            else if (k == "plateau_bad") plateau_bad = std::stoi(v);
        }
    }
    TrainConfig cfg = TrainConfig::parse_text(config_text);

    std::vector<std::string> syms;
    {
        std::istringstream vs(vocab_line);
        std::string s;
        while (vs >> s) syms.push_back(s);
    }
    auto model = std::make_unique<Model>(cfg, AtomVocabulary::from_symbols(syms));
    if (!prior_line.empty() && prior_line != "-") {
        model->prior = AtomCountPrior::parse(prior_line);
        model->has_prior = true;
    }
    model->step = step;
    model->epoch = epoch;
    model->opt.t = adam_t;
    model->opt.lr_current = lr_current == 0.0 ? cfg.lr : lr_current;
    model->opt.best_val = best_val;
    model->opt.has_best = has_best;
    model->opt.plateau_bad = plateau_bad;

    // ---- tensors ----
    struct Entry {
        std::string dtype;
        Eigen::Index rows, cols;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> entries;
    std::istringstream mf(manifest);
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        Entry e;
        if (!(ls >> name >> e.dtype >> e.rows >> e.cols >> e.offset))
            throw std::runtime_error("checkpoint: bad manifest line: " + line);
        entries[name] = e;
    }
    bool any_opt = false;
    for (const auto& [name, e] : entries)
        if (name.rfind("opt.m.", 0) == 0) any_opt = true;
    for (const auto& p : model->reg_.all()) {
        auto it = entries.find(p->name);
        if (it == entries.end()) throw std::runtime_error("checkpoint: missing tensor " + p->name);
        const Entry& e = it->second;
        if (e.rows != p->value.rows() || e.cols != p->value.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
        p->value = read_blob(in, e.offset, e.dtype, e.rows, e.cols);
    }
    if (any_opt) {
        model->init_opt_state();
        const auto& params = model->reg_.all();
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto im = entries.find("opt.m." + params[i]->name);
            auto iv = entries.find("opt.v." + params[i]->name);
            if (im == entries.end() || iv == entries.end())
                throw std::runtime_error("checkpoint: incomplete optimizer state");
            model->opt.m[i] = read_blob(in, im->second.offset, im->second.dtype, im->second.rows, im->second.cols);
            model->opt.v[i] = read_blob(in, iv->second.offset, iv->second.dtype, iv->second.rows, iv->second.cols);
        }
    }
    return model;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[8192];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace mollae
