#include "doctest.h"

#include <algorithm>
#include <set>
#include <vector>

#include "egnn.hpp"
#include "geom.hpp"

using namespace mollae;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_coords(int n, uint64_t seed, double scale = 2.0) {
    Rng rng(seed);
    Mat m(n, 3);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = scale * rng.normal();
    return m;
}

Mat random_feats(int n, int d, uint64_t seed) {
    Rng rng(seed);
    Mat m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    return m;
}

BackboneConfig small_cfg(bool attention = true, bool timecond = false) {
    BackboneConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.k = 4;
    cfg.d_f = 16;
    cfg.attention = attention;
    cfg.time_conditioned = timecond;
    cfg.rbf_bins = 8;
    cfg.rbf_max = 6.0;
    return cfg;
}

}  // namespace

TEST_CASE("knn graph on three collinear points") {
    Mat pts(3, 3);
    pts << 0, 0, 0, 1, 0, 0, 3, 0, 0;
    EdgeList e = knn_graph(pts, {1, 1, 1}, 1);
    CHECK(e.per_node == 1);
    REQUIRE(e.src.size() == 3);
    CHECK(e.dst == std::vector<int>{0, 1, 2});
    CHECK(e.src == std::vector<int>{1, 0, 1});  // nearest neighbour of each
}

TEST_CASE("knn clamps k to N-1") {
    Mat pts = random_coords(3, 7);
    EdgeList e = knn_graph(pts, {1, 1, 1}, 5);
    CHECK(e.per_node == 2);
    CHECK(e.src.size() == 6);
}

TEST_CASE("knn ties break toward the lower source index") {
    Mat pts(4, 3);
    pts << 0, 0, 0, 1, 0, 0, -1, 0, 0, 10, 0, 0;  // sources 1 and 2 tie at distance 1 from node 0
    EdgeList e = knn_graph(pts, {1, 1, 1, 1}, 1);
    CHECK(e.src[0] == 1);
}

TEST_CASE("knn matches a brute-force oracle on 50 points") {
    Mat pts = random_coords(50, 99);
    const int k = 7;
    EdgeList e = knn_graph(pts, std::vector<uint8_t>(50, 1), k);
    REQUIRE(e.per_node == k);
    for (int i = 0; i < 50; ++i) {
        std::vector<std::pair<double, int>> cand;
        for (int j = 0; j < 50; ++j) {
            if (j == i) continue;
            cand.emplace_back((pts.row(i) - pts.row(j)).squaredNorm(), j);
        }
        std::sort(cand.begin(), cand.end());
        for (int m = 0; m < k; ++m) {
            CHECK(e.dst[static_cast<std::size_t>(i * k + m)] == i);
            CHECK(e.src[static_cast<std::size_t>(i * k + m)] == cand[static_cast<std::size_t>(m)].second);
        }
    }
}

TEST_CASE("knn role tags") {
    Mat pts(3, 3);
    pts << 0, 0, 0, 1, 0, 0, 3, 0, 0;
    EdgeList e = knn_graph(pts, {1, 0, 1}, 1);  // node 1 is a condition node
    // edge 0: dst 0 (update) <- src 1 (condition): class 1
    CHECK(e.tag(0, 1) == 1.0);
    // edge 1: dst 1 (condition) <- src 0 (update): class 2
    CHECK(e.tag(1, 2) == 1.0);
    // edge 2: dst 2 (update) <- src 1 (condition): class 1
    CHECK(e.tag(2, 1) == 1.0);
    CHECK(e.tag.rowwise().sum().maxCoeff() == 1.0);

    CHECK_THROWS(knn_graph(Mat::Zero(1, 3), {1}, 1));
    CHECK_THROWS(knn_graph(pts, {1, 0, 1}, 0));
    CHECK_THROWS(knn_graph(pts, {1, 0}, 1));
}

TEST_CASE("backbone output shapes and condition feature passthrough") {
    ad::ParamRegistry reg;
    Rng init(3);
    Backbone bb(small_cfg(), reg, "bb", init);

    ad::Tape tape;
    Mat xc = random_coords(6, 11);
    xc.rowwise() -= xc.colwise().mean().eval();
    BackboneOut out = bb.forward(tape, tape.constant(random_coords(4, 10, 0.5)), tape.constant(random_feats(4, 16, 12)),
                                 tape.constant(xc), tape.constant(random_feats(6, 16, 13)));
    CHECK(out.x_update.rows() == 4);
    CHECK(out.x_update.cols() == 3);
    CHECK(out.h_update.rows() == 4);
    CHECK(out.h_update.cols() == 16);
    CHECK(out.h_cond.rows() == 6);
}

TEST_CASE("backbone requires centered condition coordinates") {
    ad::ParamRegistry reg;
    Rng init(3);
    Backbone bb(small_cfg(), reg, "bb", init);
    ad::Tape tape;
    Mat xc = random_coords(5, 21);
    xc.array() += 3.0;  // clearly off-center
    CHECK_THROWS(bb.forward(tape, tape.constant(random_coords(3, 22, 0.5)), tape.constant(random_feats(3, 16, 23)),
                            tape.constant(xc), tape.constant(random_feats(5, 16, 24))));
}

TEST_CASE("backbone is rotation-equivariant to 1e-10") {
    for (bool attention : {true, false}) {
        CAPTURE(attention);
        ad::ParamRegistry reg;
        Rng init(5);
        Backbone bb(small_cfg(attention), reg, "bb", init);

        Mat xu = random_coords(5, 31, 0.8);
        Mat hu = random_feats(5, 16, 32);
        Mat xc = random_coords(7, 33);
        xc.rowwise() -= xc.colwise().mean().eval();
        Mat hc = random_feats(7, 16, 34);

        ad::Tape t1;
        BackboneOut a = bb.forward(t1, t1.constant(xu), t1.constant(hu), t1.constant(xc), t1.constant(hc));

        Rng rotrng(77);
        RigidTransform T = random_rotation(rotrng);
        ad::Tape t2;
        BackboneOut b = bb.forward(t2, t2.constant(apply(T, xu)), t2.constant(hu), t2.constant(apply(T, xc)),
                                   t2.constant(hc));

        CHECK((b.x_update.val() - apply(T, a.x_update.val())).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((b.h_update.val() - a.h_update.val()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((b.h_cond.val() - a.h_cond.val()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("backbone is permutation-equivariant over update nodes") {
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(small_cfg(), reg, "bb", init);

    Mat xu = random_coords(5, 41, 0.8);
    Mat hu = random_feats(5, 16, 42);
    Mat xc = random_coords(6, 43);
    xc.rowwise() -= xc.colwise().mean().eval();
    Mat hc = random_feats(6, 16, 44);

    ad::Tape t1;
    BackboneOut a = bb.forward(t1, t1.constant(xu), t1.constant(hu), t1.constant(xc), t1.constant(hc));

    const std::vector<int> perm = {3, 0, 4, 1, 2};
    Mat xu_p(5, 3), hu_p(5, 16);
    for (int i = 0; i < 5; ++i) {
        xu_p.row(i) = xu.row(perm[static_cast<std::size_t>(i)]);
        hu_p.row(i) = hu.row(perm[static_cast<std::size_t>(i)]);
    }
    ad::Tape t2;
    BackboneOut b = bb.forward(t2, t2.constant(xu_p), t2.constant(hu_p), t2.constant(xc), t2.constant(hc));
    for (int i = 0; i < 5; ++i) {
        CHECK((b.x_update.val().row(i) - a.x_update.val().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
              1e-12);
        CHECK((b.h_update.val().row(i) - a.h_update.val().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
              1e-12);
    }
}

TEST_CASE("zeroed coordinate gates leave update coordinates bit-identical") {
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(small_cfg(), reg, "bb", init);
    for (int l = 0; l < 2; ++l) {
        reg.find("bb.layer" + std::to_string(l) + ".gate_w2")->value.setZero();
        reg.find("bb.layer" + std::to_string(l) + ".gate_b2")->value.setZero();
    }
    Mat xu = random_coords(4, 51, 0.8);
    Mat xc = random_coords(5, 52);
    xc.rowwise() -= xc.colwise().mean().eval();
    ad::Tape tape;
    BackboneOut out =
        bb.forward(tape, tape.constant(xu), tape.constant(random_feats(4, 16, 53)), tape.constant(xc),
                   tape.constant(random_feats(5, 16, 54)));
    CHECK(out.x_update.val() == xu);
}

TEST_CASE("zero layers return inputs unchanged") {
    BackboneConfig cfg = small_cfg();
    cfg.layers = 0;
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(cfg, reg, "bb", init);
    CHECK(reg.tensor_count() == 0);

    Mat xu = random_coords(3, 61);
    Mat hu = random_feats(3, 16, 62);
    ad::Tape tape;
    BackboneOut out = bb.forward(tape, tape.constant(xu), tape.constant(hu), tape.zeros(0, 3), tape.zeros(0, 16));
    CHECK(out.x_update.val() == xu);
    CHECK(out.h_update.val() == hu);
}

TEST_CASE("time conditioning is honored") {
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(small_cfg(true, true), reg, "bb", init);

    Mat xu = random_coords(4, 71, 0.8);
    Mat hu = random_feats(4, 16, 72);
    ad::Tape t1, t2, t3;
    BackboneOut a = bb.forward(t1, t1.constant(xu), t1.constant(hu), t1.zeros(0, 3), t1.zeros(0, 16), 0.25);
    BackboneOut b = bb.forward(t2, t2.constant(xu), t2.constant(hu), t2.zeros(0, 3), t2.zeros(0, 16), 0.75);
    CHECK((a.h_update.val() - b.h_update.val()).cwiseAbs().maxCoeff() > 1e-8);
    CHECK_THROWS(bb.forward(t3, t3.constant(xu), t3.constant(hu), t3.zeros(0, 3), t3.zeros(0, 16)));  // time missing
}

TEST_CASE("non-finite inputs are rejected with the failing layer") {
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(small_cfg(), reg, "bb", init);
    Mat xu = random_coords(3, 81);
    xu(1, 2) = std::numeric_limits<double>::quiet_NaN();
    ad::Tape tape;
    CHECK_THROWS_WITH_AS(bb.forward(tape, tape.constant(xu), tape.constant(random_feats(3, 16, 82)), tape.zeros(0, 3),
                                    tape.zeros(0, 16)),
                         doctest::Contains("layer"), std::runtime_error);
}

TEST_CASE("gradients flow to every backbone parameter") {
    ad::ParamRegistry reg;
    Rng init(5);
    Backbone bb(small_cfg(), reg, "bb", init);

    ad::Tape tape;
    Mat xc = random_coords(5, 91);
    xc.rowwise() -= xc.colwise().mean().eval();
    BackboneOut out = bb.forward(tape, tape.constant(random_coords(3, 92, 0.8)), tape.constant(random_feats(3, 16, 93)),
                                 tape.constant(xc), tape.constant(random_feats(5, 16, 94)));
    ad::Var loss = ad::add(ad::sum(ad::square(out.x_update)), ad::sum(ad::square(out.h_update)));
    tape.backward(loss);
    for (const auto& p : reg.all()) {
        INFO(p->name);
        CHECK(p->grad.allFinite());
        CHECK(p->grad.cwiseAbs().maxCoeff() > 0.0);
    }
}
