#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <numeric>
#include <random>

#include "dhue/classifier.hpp"
#include "dhue/error.hpp"
#include "dhue/objectives.hpp"
#include "test_support.hpp"

using namespace dhue;
namespace fs = std::filesystem;

namespace {

FeatureExtractor toy(const std::string& id) {
    BackboneSpec spec;
    spec.backbone_id = id;
    return load_backbone(spec);
}

ImageTensor offset(const ImageTensor& x, double d) {
    ImageTensor out = x;
    for (auto& v : out.data()) v += d;
    return out;
}

// Plain double loops over extracted features, no autodiff.
double naive_conc(const std::vector<ImageTensor>& maps, const std::vector<int>& labels, const FeatureExtractor& g) {
    std::vector<std::vector<double>> f;
    for (const auto& m : maps) f.push_back(g.extract(offset(m, 0.5)));
    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t j = i + 1; j < maps.size(); ++j) {
            if (labels[i] != labels[j]) continue;
            double dot = 0, ni = 0, nj = 0;
            for (std::size_t k = 0; k < f[i].size(); ++k) {
                dot += f[i][k] * f[j][k];
                ni += f[i][k] * f[i][k];
                nj += f[j][k] * f[j][k];
            }
            total += 1.0 - dot / std::sqrt(ni * nj);
            ++count;
        }
    return count ? total / count : 0.0;
}

}  // namespace

TEST_CASE("hide loss floors at eps squared") {
    std::mt19937_64 rng(41);
    const double eps = kDefaultEpsilon;
    auto x = testing::random_image(rng, 3, 8, 8);
    CHECK(hide_loss(x, x, eps) == doctest::Approx(eps * eps).epsilon(1e-12));
    CHECK(hide_loss(offset(x, 0.1), x, eps) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(hide_loss(offset(x, eps), x, eps) == doctest::Approx(eps * eps).epsilon(1e-12));
    CHECK(hide_loss(offset(x, 0.5 * eps), x, eps) == doctest::Approx(eps * eps).epsilon(1e-12));
    CHECK_THROWS_AS(hide_loss(x, ImageTensor(3, 4, 4), eps), ShapeError);
}

TEST_CASE("frequency loss ignores detail-only differences") {
    std::mt19937_64 rng(42);
    auto x = testing::random_image(rng, 3, 8, 8);
    ImageTensor y = x;
    // Every 2x2 block gets +d,-d,-d,+d; block sums unchanged.
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) y.at(c, i, j) += ((i + j) % 2 == 0 ? 0.05 : -0.05);
    CHECK(freq_loss(y, x) <= 1e-20);
    CHECK(freq_loss(ImageTensor(1, 4, 4, RangeTag::unit, 0.7), ImageTensor(1, 4, 4, RangeTag::unit, 0.2)) ==
          doctest::Approx(4 * 0.25).epsilon(1e-12));
}

TEST_CASE("reveal loss is plain mse") {
    std::mt19937_64 rng(43);
    auto x = testing::random_image(rng, 3, 4, 4, 0.0, 0.8);
    CHECK(reveal_loss(offset(x, 0.1), x) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(reveal_loss(x, x) == 0.0);
}

TEST_CASE("concentration loss closed forms") {
    auto g = toy("toy-conv");
    std::mt19937_64 rng(44);
    auto m = testing::random_image(rng, 3, 8, 8, -0.03, 0.03);
    m.set_range(RangeTag::signed_diff);
    std::vector<ImageTensor> same{m, m, m};
    std::vector<int> labels{1, 1, 1};
    CHECK(std::abs(conc_loss(same, labels, g)) <= 1e-12);

    auto m2 = testing::random_image(rng, 3, 8, 8, -0.03, 0.03);
    std::vector<ImageTensor> two{m, m2};
    std::vector<int> distinct{0, 1};
    ConcDiagnostics diag;
    CHECK(conc_loss(two, distinct, g, &diag) == 0.0);
    CHECK(diag.pairs == 0);

    // Orthogonal and antipodal features, directly on the pair-distance op.
    Tensor f(Shape{3, 2, 1, 1}, std::vector<double>{1, 0, 0, 3, -2, 0});
    std::vector<int> l3{0, 0, 5};
    CHECK(ad::mean_pair_cosine_distance(ad::constant(f), l3).item() == doctest::Approx(1.0));
    std::vector<int> l3b{0, 1, 0};
    CHECK(ad::mean_pair_cosine_distance(ad::constant(f), l3b).item() == doctest::Approx(2.0));
}

TEST_CASE("concentration loss matches a naive computation") {
    std::mt19937_64 rng(45);
    for (const char* id : {"toy-linear", "toy-conv"}) {
        auto g = toy(id);
        std::vector<ImageTensor> maps;
        std::vector<int> labels{0, 1, 0, 1, 0, 2};
        for (int i = 0; i < 6; ++i) maps.push_back(testing::random_image(rng, 3, 8, 8, -0.1, 0.1));
        CHECK(conc_loss(maps, labels, g) == doctest::Approx(naive_conc(maps, labels, g)).epsilon(1e-10));
    }
}

TEST_CASE("concentration loss is invariant to feature scaling and batch order") {
    std::mt19937_64 rng(46);
    Tensor f = testing::random_tensor(rng, Shape{6, 5, 1, 1});
    std::vector<int> labels{0, 1, 0, 0, 1, 2};
    const double base = ad::mean_pair_cosine_distance(ad::constant(f), labels).item();

    Tensor scaled = f;
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int i = 0; i < 6; ++i) {
        const double a = u(rng);
        for (int k = 0; k < 5; ++k) scaled[i * 5 + k] *= a;
    }
    CHECK(ad::mean_pair_cosine_distance(ad::constant(scaled), labels).item() == doctest::Approx(base).epsilon(1e-12));

    auto g = toy("toy-conv");
    std::vector<ImageTensor> maps;
    for (int i = 0; i < 6; ++i) maps.push_back(testing::random_image(rng, 3, 8, 8, -0.1, 0.1));
    const double v = conc_loss(maps, labels, g);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ImageTensor> pm;
    std::vector<int> pl;
    for (auto p : perm) {
        pm.push_back(maps[p]);
        pl.push_back(labels[p]);
    }
    CHECK(conc_loss(pm, pl, g) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("zero feature vectors count as distance one") {
    auto g = toy("toy-linear");
    // map + 0.5 == 0 gives a zero input, and the linear toy maps zero to zero.
    ImageTensor z(3, 8, 8, RangeTag::signed_diff, -0.5);
    std::mt19937_64 rng(47);
    auto other = testing::random_image(rng, 3, 8, 8, -0.1, 0.1);
    std::vector<ImageTensor> maps{z, other};
    std::vector<int> labels{0, 0};
    ConcDiagnostics diag;
    CHECK(conc_loss(maps, labels, g, &diag) == 1.0);
    CHECK(diag.pairs == 1);
    CHECK(diag.zero_feature_pairs == 1);
}

TEST_CASE("total loss is the weighted sum of its terms") {
    std::mt19937_64 rng(48);
    auto g = toy("toy-conv");
    LossWeights w{0.7, 1.3, 0.2, kDefaultEpsilon};
    std::vector<ImageTensor> xc, xue, xh, xr;
    std::vector<int> labels{0, 0, 1};
    for (int i = 0; i < 3; ++i) {
        xc.push_back(testing::random_image(rng, 3, 8, 8));
        xue.push_back(testing::random_image(rng, 3, 8, 8));
        xh.push_back(testing::random_image(rng, 3, 8, 8));
        xr.push_back(testing::random_image(rng, 3, 8, 8));
    }
    auto batch = [](const std::vector<ImageTensor>& v) {
        std::vector<Tensor> ts;
        for (const auto& x : v) ts.push_back(x.to_tensor());
        return ad::constant(stack(ts));
    };
    auto terms = ad::total_loss(batch(xue), batch(xc), batch(xr), batch(xh), labels, w, g).values();

    double hide = 0, freq = 0, rev = 0;
    std::vector<ImageTensor> maps;
    for (int i = 0; i < 3; ++i) {
        hide += hide_loss(xue[i], xc[i], w.epsilon) / 3;
        freq += freq_loss(xue[i], xc[i]) / 3;
        rev += reveal_loss(xr[i], xh[i]) / 3;
        maps.push_back(perturbation_map(xue[i], xc[i]));
    }
    const double conc = conc_loss(maps, labels, g);
    CHECK(terms.hide == doctest::Approx(hide).epsilon(1e-12));
    CHECK(terms.freq == doctest::Approx(freq).epsilon(1e-12));
    CHECK(terms.reveal == doctest::Approx(rev).epsilon(1e-12));
    CHECK(terms.conc == doctest::Approx(conc).epsilon(1e-10));
    CHECK(terms.total == doctest::Approx(hide + 0.7 * freq + 1.3 * rev + 0.2 * conc).epsilon(1e-12));
    CHECK(LossBreakdown::combine(hide, freq, rev, conc, w).total == doctest::Approx(terms.total).epsilon(1e-10));
}

TEST_CASE("total loss gradient matches finite differences") {
    std::mt19937_64 rng(49);
    auto g = toy("toy-conv");
    LossWeights w{1.0, 1.0, 1.0, kDefaultEpsilon};
    Shape s{3, 3, 4, 4};
    Tensor xc = testing::random_tensor(rng, s, 0.2);
    Tensor xue = xc;
    for (auto& v : xue.vec()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
    Tensor xh = testing::random_tensor(rng, s, 0.2), xr = testing::random_tensor(rng, s, 0.2);
    std::vector<int> labels{2, 2, 2};

    ad::Var p = ad::parameter(xue);
    ad::total_loss(p, ad::constant(xc), ad::constant(xr), ad::constant(xh), labels, w, g).total.backward();
    int bad = 0;
    for (std::size_t i = 0; i < xue.size(); ++i) {
        auto eval = [&] {
            return ad::total_loss(ad::constant(xue), ad::constant(xc), ad::constant(xr), ad::constant(xh), labels, w, g)
                .total.item();
        };
        const double fd = testing::central_difference(eval, xue[i], 1e-6);
        const double an = p.grad()[i];
        if (!(std::abs(an - fd) < 1e-8 || testing::relative_error(an, fd) < 1e-5)) ++bad;
    }
    CHECK(bad == 0);
}

TEST_CASE("backbone loading") {
    auto a = toy("toy-conv"), b = toy("toy-conv");
    std::mt19937_64 rng(50);
    auto x = testing::random_image(rng, 3, 8, 8);
    CHECK(a.extract(x) == b.extract(x));
    CHECK(a.output_dim() == 16);

    auto lin = toy("toy-linear");
    for (double v : lin.extract(ImageTensor(3, 8, 8))) CHECK(v == 0.0);

    BackboneSpec bad;
    bad.backbone_id = "resnet-9000";
    CHECK_THROWS_AS(load_backbone(bad), ConfigError);
    BackboneSpec dim;
    dim.declared_dim = 99;
    CHECK_THROWS_AS(load_backbone(dim), FormatError);

    fs::path dir = fs::temp_directory_path() / "dhue_test_objectives";
    fs::create_directories(dir);
    ClassifierConfig cfg;
    cfg.classes = 4;
    cfg.widths = {6, 10};
    save_classifier(dir / "c.ckpt", init_classifier(cfg, 3));
    BackboneSpec cs;
    cs.backbone_id = "classifier";
    cs.checkpoint = dir / "c.ckpt";
    auto cl = load_backbone(cs);
    CHECK(cl.output_dim() == 10);
    CHECK(cl.extract(x).size() == 10u);
    cs.checkpoint = dir / "none.ckpt";
    CHECK_THROWS_AS(load_backbone(cs), IoError);
}
