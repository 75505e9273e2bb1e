#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "moldata.hpp"

using namespace mollae;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = "/tmp/mollae_test_" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("shipped chemistry table matches the embedded copy byte for byte") {
    std::ifstream in(std::string(TEST_SOURCE_DIR) + "/data/chem_tables.txt", std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == ChemTables::default_text());
}

TEST_CASE("chemistry table contents") {
    const ChemTables& t = ChemTables::builtin();
    CHECK(t.version == 1);
    CHECK(t.margin_pm[1] == 10.0);
    CHECK(t.margin_pm[2] == 5.0);
    CHECK(t.margin_pm[3] == 3.0);

    const std::map<std::string, std::vector<int>> expect = {
        {"H", {1}},  {"C", {4}},  {"N", {3}},  {"O", {2}},  {"F", {1}},     {"B", {3}},  {"Al", {3}},
        {"Si", {4}}, {"P", {3, 5}}, {"S", {4}}, {"Cl", {1}}, {"As", {3}}, {"Br", {1}}, {"I", {1}},
    };
    for (const auto& [sym, vals] : expect) {
        REQUIRE_MESSAGE(t.valences.count(sym) == 1, sym);
        CHECK(t.valences.at(sym) == vals);
    }

    // symmetric lookup, canonical textbook entries
    CHECK(t.bond_ref_pm("C", "C", 1) == 154.0);
    CHECK(t.bond_ref_pm("C", "C", 2) == 134.0);
    CHECK(t.bond_ref_pm("C", "C", 3) == 120.0);
    CHECK(t.bond_ref_pm("H", "C", 1) == t.bond_ref_pm("C", "H", 1));
    CHECK(t.bond_ref_pm("C", "O", 2) == 120.0);
    CHECK(t.bond_ref_pm("Xx", "C", 1) < 0.0);  // unknown pair
    CHECK(ChemTables::key("O", "C", 2) == ChemTables::key("C", "O", 2));
}

TEST_CASE("chem table parse errors") {
    CHECK_THROWS(ChemTables::parse("valence H 1\n"));              // missing header
    CHECK_THROWS(ChemTables::parse("format chem-tables 1\nbogus x\n"));
    CHECK_THROWS(ChemTables::parse("format chem-tables 1\nvalence H\n"));
}

TEST_CASE("vocabularies") {
    AtomVocabulary qm9 = AtomVocabulary::qm9();
    CHECK(qm9.size() == 5);
    CHECK(qm9.symbols == std::vector<std::string>{"H", "C", "N", "O", "F"});
    CHECK(qm9.index("C") == 1);
    CHECK(qm9.index("Si") == -1);
    CHECK(qm9.symbol(3) == "O");
    CHECK(qm9.valences(1) == std::vector<int>{4});
    CHECK(qm9.bond_ref_pm(1, 1, 1) == 154.0);

    AtomVocabulary drugs = AtomVocabulary::drugs();
    CHECK(drugs.size() == 9);
    CHECK(drugs.index("Cl") >= 0);
    CHECK(drugs.index("H") == -1);  // heavy-atom vocabulary

    CHECK_THROWS(AtomVocabulary::from_symbols({"C"}));            // too small
    CHECK_THROWS(AtomVocabulary::from_symbols({"C", "C", "N"}));  // duplicate
}

TEST_CASE("center is idempotent and kills translations") {
    Molecule m;
    m.coords.resize(3, 3);
    m.coords << 1, 0, 0, 2, 1, -1, 6, 2, 4;
    m.types = {0, 1, 2};

    Molecule c = center(m);
    CHECK(c.coords.colwise().mean().cwiseAbs().maxCoeff() < 1e-14);
    Molecule cc = center(c);
    CHECK((cc.coords - c.coords).cwiseAbs().maxCoeff() < 1e-14);

    Molecule shifted = m;
    shifted.coords.rowwise() += Eigen::RowVector3d(5.0, -3.0, 2.0);
    CHECK((center(shifted).coords - c.coords).cwiseAbs().maxCoeff() < 1e-12);

    Molecule single;
    single.coords = Eigen::RowVector3d(4.0, 5.0, 6.0);
    single.types = {0};
    CHECK(center(single).coords.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("one-hot encoding") {
    AtomVocabulary vocab = AtomVocabulary::qm9();
    Molecule m;
    m.coords = Eigen::MatrixXd::Zero(3, 3);
    m.types = {1, 0, 4};
    Eigen::MatrixXd oh = one_hot(m, vocab);
    REQUIRE(oh.rows() == 3);
    REQUIRE(oh.cols() == 5);
    CHECK(oh.sum() == 3.0);
    CHECK(oh(0, 1) == 1.0);
    CHECK(oh(1, 0) == 1.0);
    CHECK(oh(2, 4) == 1.0);

    m.types = {7, 0, 0};
    CHECK_THROWS(one_hot(m, vocab));
}

TEST_CASE("xyz parsing: single atom, multiple blocks, whitespace") {
    const std::string path = write_temp("basic.xyz",
                                        "1\n"
                                        "a lone hydrogen\n"
                                        "H 0.0 0.0 0.0\n"
                                        "3\n"
                                        "\n"
                                        "O   0.0 0.0 0.117\n"
                                        "H   0.0 0.757 -0.467\n"
                                        "H   0.0 -0.757 -0.467\n");
    auto mols = load_xyz(path, AtomVocabulary::qm9());
    REQUIRE(mols.size() == 2);
    CHECK(mols[0].size() == 1);
    CHECK(mols[0].types[0] == 0);
    CHECK(mols[1].size() == 3);
    CHECK(mols[1].types[0] == 3);
    CHECK(mols[1].coords(1, 1) == doctest::Approx(0.757));
    std::remove(path.c_str());
}

TEST_CASE("xyz parsing errors") {
    AtomVocabulary vocab = AtomVocabulary::qm9();
    CHECK_THROWS_WITH_AS(load_xyz("/tmp/definitely_missing_897.xyz", vocab), doctest::Contains("cannot open"),
                         std::runtime_error);

    const std::string bad_sym = write_temp("badsym.xyz", "1\nc\nXx 0 0 0\n");
    CHECK_THROWS_WITH_AS(load_xyz(bad_sym, vocab), doctest::Contains("Xx"), std::runtime_error);
    std::remove(bad_sym.c_str());

    const std::string bad_count = write_temp("badcount.xyz", "two\nc\nH 0 0 0\n");
    CHECK_THROWS(load_xyz(bad_count, vocab));
    std::remove(bad_count.c_str());

    const std::string bad_coord = write_temp("badcoord.xyz", "1\nc\nH 0 zero 0\n");
    CHECK_THROWS(load_xyz(bad_coord, vocab));
    std::remove(bad_coord.c_str());

    const std::string truncated = write_temp("trunc.xyz", "2\nc\nH 0 0 0\n");
    CHECK_THROWS(load_xyz(truncated, vocab));
    std::remove(truncated.c_str());
}

TEST_CASE("xyz round-trip preserves coordinates and types") {
    AtomVocabulary vocab = AtomVocabulary::qm9();
    std::vector<Molecule> mols(2);
    mols[0].coords.resize(2, 3);
    mols[0].coords << 0.123456789, -1.5, 2.25, 3.0, 4.0, 5.0;
    mols[0].types = {1, 3};
    mols[1].coords.resize(1, 3);
    mols[1].coords << -0.000123, 9.875, -7.5;
    mols[1].types = {4};

    const std::string path = "/tmp/mollae_test_roundtrip.xyz";
    save_xyz(path, mols, vocab);
    auto back = load_xyz(path, vocab);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < mols.size(); ++i) {
        CHECK(back[i].types == mols[i].types);
        CHECK((back[i].coords - mols[i].coords).cwiseAbs().maxCoeff() < 1e-9);
    }
    std::remove(path.c_str());
}

TEST_CASE("atom-count prior fit, sampling, and serialization") {
    std::vector<Molecule> data(3);
    data[0].coords = Eigen::MatrixXd::Zero(3, 3);
    data[0].types = {0, 0, 0};
    data[1].coords = Eigen::MatrixXd::Zero(5, 3);
    data[1].types = {0, 0, 0, 0, 0};
    data[2].coords = Eigen::MatrixXd::Zero(3, 3);
    data[2].types = {0, 0, 0};

    AtomCountPrior prior = AtomCountPrior::fit(data);
    REQUIRE(prior.probs.size() == 2);
    CHECK(prior.probs[0].first == 3);
    CHECK(prior.probs[0].second == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(prior.probs[1].first == 5);
    CHECK(prior.probs[1].second == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(prior.prob_of(3) == doctest::Approx(2.0 / 3.0));
    CHECK(prior.prob_of(4) == 0.0);

    Rng rng(12345);
    const int n = 100000;
    int threes = 0;
    for (int i = 0; i < n; ++i) {
        const int s = prior.sample(rng);
        REQUIRE((s == 3 || s == 5));
        if (s == 3) ++threes;
    }
    CHECK(static_cast<double>(threes) / n == doctest::Approx(2.0 / 3.0).epsilon(0.015));

    AtomCountPrior back = AtomCountPrior::parse(prior.serialize());
    REQUIRE(back.probs.size() == prior.probs.size());
    for (std::size_t i = 0; i < back.probs.size(); ++i) {
        CHECK(back.probs[i].first == prior.probs[i].first);
        CHECK(back.probs[i].second == prior.probs[i].second);  // %.17g is lossless
    }

    CHECK_THROWS(AtomCountPrior::fit({}));
    CHECK_THROWS(AtomCountPrior::parse("nonsense"));
}
