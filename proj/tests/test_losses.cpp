#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jacmatch/losses.hpp"
#include "support/finite_diff.hpp"

using namespace jm;
using namespace jm::ad;
using namespace jm::nn;
using namespace jm::losses;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

// a 1-D linear net S(x) = w*x as a Network (dense 1->1, zero bias)
Network linear_net_1d(double w) {
    Rng rng(0);
    Network net = make_mlp(1, {}, 1, LayerKind::relu, rng);
    net.heads[0].params[0].mutable_data()[0] = w;
    net.heads[0].params[1].mutable_data()[0] = 0.0;
    return net;
}

Network linear_net(const Tensor& w) {  // S(x) = W x
    Rng rng(0);
    Network net = make_mlp(w.shape()[1], {}, w.shape()[0], LayerKind::relu, rng);
    net.heads[0].params[0] = w.clone();
    for (double& v : net.heads[0].params[1].mutable_data()) v = 0.0;
    return net;
}

}  // namespace

TEST_CASE("match_activations_sq: identical outputs give zero") {
    Tensor t = Tensor::from({3}, {1.0, -2.0, 0.5});
    CHECK(match_activations_sq(t, t.clone()).value() == 0.0);
}

TEST_CASE("match_activations_sq: (1,0) vs (0,1) gives 2") {
    Tensor t = Tensor::from({2}, {1.0, 0.0});
    Tensor s = Tensor::from({2}, {0.0, 1.0});
    CHECK(match_activations_sq(t, s).value() == doctest::Approx(2.0));
}

TEST_CASE("match_activations_sq: t=2x vs s=x at x=3 gives 9") {
    Network t = linear_net_1d(2.0);
    Network s = linear_net_1d(1.0);
    Tensor x = Tensor::from({1}, {3.0});
    Tensor tl = forward(t, x).logits;
    Tensor sl = forward(s, x).logits;
    CHECK(match_activations_sq(tl, sl).value() == doctest::Approx(9.0));
}

TEST_CASE("match_activations_sq: length mismatch is rejected") {
    Tensor t = Tensor::from({2}, {1.0, 0.0});
    Tensor s = Tensor::from({3}, {0.0, 1.0, 0.0});
    CHECK_THROWS_WITH_AS(match_activations_sq(t, s), doctest::Contains("lengths differ"),
                         std::runtime_error);
}

TEST_CASE("match_jacobians_sq: teacher == student gives zero") {
    Rng rng(1);
    Network t = make_mlp(3, {4}, 2, LayerKind::relu, rng);
    Network s = t.clone();
    Tensor x = random_tensor(rng, {3});
    Tape tape;
    Tensor loss = match_jacobians_sq(t, s, x, {}, 1.0, tape);
    CHECK(loss.value() == doctest::Approx(0.0));
}

TEST_CASE("match_jacobians_sq: T=2x vs S=x with sigma=1 gives 1") {
    Network t = linear_net_1d(2.0);
    Network s = linear_net_1d(1.0);
    Tensor x = Tensor::from({1}, {0.7});
    Tape tape;
    CHECK(match_jacobians_sq(t, s, x, {}, 1.0, tape).value() == doctest::Approx(1.0));
}

TEST_CASE("match_jacobians_sq: full and correct-class agree when k=1") {
    Rng rng(2);
    Network t = make_mlp(2, {3}, 1, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {2}, 1, LayerKind::sigmoid, rng);
    Tensor x = random_tensor(rng, {2});
    Tape t1, t2;
    JacobianStrategy full{JacobianMode::full, 0};
    JacobianStrategy cc{JacobianMode::correct_class, 0};
    const double a = match_jacobians_sq(t, s, x, full, 0.5, t1).value();
    const double b = match_jacobians_sq(t, s, x, cc, 0.5, t2, nullptr, 0).value();
    CHECK(a == doctest::Approx(b));
}

TEST_CASE("match_jacobians_sq: correct-class without a label is rejected") {
    Rng rng(3);
    Network t = make_mlp(2, {2}, 3, LayerKind::relu, rng);
    Network s = make_mlp(2, {2}, 3, LayerKind::relu, rng);
    Tensor x = random_tensor(rng, {2});
    Tape tape;
    JacobianStrategy cc{JacobianMode::correct_class, 0};
    CHECK_THROWS_WITH_AS(match_jacobians_sq(t, s, x, cc, 1.0, tape),
                         doctest::Contains("requires a label"), std::runtime_error);
}

TEST_CASE("match_jacobians_sq: sigma=0 raises the vanishing-term warning") {
    Rng rng(4);
    Network t = make_mlp(2, {2}, 2, LayerKind::relu, rng);
    Network s = make_mlp(2, {2}, 2, LayerKind::relu, rng);
    Tensor x = random_tensor(rng, {2});
    Tape tape;
    bool warned = false;
    Tensor loss = match_jacobians_sq(t, s, x, {}, 0.0, tape, nullptr, std::nullopt, &warned);
    CHECK(warned);
    CHECK(loss.value() == 0.0);
}

TEST_CASE("strategy consistency: full loss >= any single-index strategy") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        Network t = make_mlp(3, {4}, 4, LayerKind::sigmoid, rng);
        Network s = make_mlp(3, {3}, 4, LayerKind::sigmoid, rng);
        Tensor x = random_tensor(rng, {3});
        Tape t1, t2, t3;
        const double full = match_jacobians_sq(t, s, x, {}, 1.0, t1).value();
        JacobianStrategy cc{JacobianMode::correct_class, 0};
        const int label = static_cast<int>(rng.uniform_index(4));
        const double one = match_jacobians_sq(t, s, x, cc, 1.0, t2, nullptr, label).value();
        JacobianStrategy mx{JacobianMode::max_output, 0};
        const double mo = match_jacobians_sq(t, s, x, mx, 1.0, t3).value();
        CHECK(full >= one - 1e-12);
        CHECK(full >= mo - 1e-12);
    }
}

TEST_CASE("match_jacobians_sq is zero iff the selected rows agree (1e-10)") {
    Rng rng(6);
    Network t = make_mlp(2, {3}, 2, LayerKind::relu, rng);

    // same function, permuted hidden layer: rows agree, loss ~ 0
    Network s = permute_hidden(t, 0, {2, 0, 1});
    Tensor x = random_tensor(rng, {2});
    Tape tape;
    CHECK(match_jacobians_sq(t, s, x, {}, 1.0, tape).value() <= 1e-10);

    // different function: loss must be positive
    Network u = make_mlp(2, {3}, 2, LayerKind::relu, rng);
    Tape tape2;
    CHECK(match_jacobians_sq(t, u, x, {}, 1.0, tape2).value() > 1e-10);
}

TEST_CASE("distill_ce_with_jacobian: sigma=0 reduces to soft-target CE") {
    Rng rng(7);
    Network t = make_mlp(2, {3}, 3, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {2}, 3, LayerKind::sigmoid, rng);
    Tensor x = random_tensor(rng, {2});
    Tape tape;
    const double with0 = distill_ce_with_jacobian(t, s, x, 0.0, 2.0, tape).value();

    // soft CE computed by hand from detached softmax outputs
    Tensor tl = forward(t, x).logits;
    Tensor sl = forward(s, x).logits;
    Tensor ts = softmax_t(tl, 2.0);
    Tensor ss = softmax_t(sl, 2.0);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) expect -= ts.data()[i] * std::log(ss.data()[i]);
    CHECK(with0 == doctest::Approx(expect));
}

TEST_CASE("distill_ce_with_jacobian: teacher==student second term is -sigma^2 sum ||grad||^2 / S") {
    Rng rng(8);
    Network t = make_mlp(2, {3}, 2, LayerKind::sigmoid, rng);
    Tensor x = random_tensor(rng, {2});
    const double sigma = 0.3, temp = 1.0;

    Tape tape;
    const double full = distill_ce_with_jacobian(t, t, x, sigma, temp, tape).value();
    Tape tape0;
    const double base = distill_ce_with_jacobian(t, t, x, 0.0, temp, tape0).value();

    // second term by hand: -sigma^2 sum_i ||d Ts_i/dx||^2 / Ts_i
    Tape probe;
    Tensor xp = probe.variable(x);
    Tensor soft = softmax_t(forward(t, xp).logits, temp);
    double reg = 0.0;
    for (int i = 0; i < 2; ++i) {
        Tensor row = grad(index_select(soft, i), xp);
        double sq = 0.0;
        for (double v : row.data()) sq += v * v;
        reg += sq / soft.data()[i];
    }
    CHECK(full - base == doctest::Approx(-sigma * sigma * reg));
}

TEST_CASE("jacobian_norm_penalty: linear S(x)=Wx squared family gives sigma^2 ||W||_F^2") {
    Rng rng(9);
    Tensor w = random_tensor(rng, {3, 4});
    Network s = linear_net(w);
    Tensor x = random_tensor(rng, {4});
    Tape tape;
    const double got =
        jacobian_norm_penalty(s, x, Tensor(), LossFamily::squared_error, 0.5, 1.0, tape).value();
    double frob = 0.0;
    for (double v : w.data()) frob += v * v;
    CHECK(got == doctest::Approx(0.25 * frob));
}

TEST_CASE("jacobian_norm_penalty: constant net gives zero (both families)") {
    Rng rng(10);
    Network s = make_mlp(3, {}, 2, LayerKind::relu, rng);
    for (double& v : s.heads[0].params[0].mutable_data()) v = 0.0;  // zero W, bias stays
    s.heads[0].params[1].mutable_data()[0] = 0.4;
    Tensor x = random_tensor(rng, {3});
    Tape t1, t2;
    CHECK(jacobian_norm_penalty(s, x, Tensor(), LossFamily::squared_error, 1.0, 1.0, t1).value() ==
          doctest::Approx(0.0));
    Tensor y = Tensor::from({2}, {1.0, 0.0});
    CHECK(jacobian_norm_penalty(s, x, y, LossFamily::cross_entropy, 1.0, 1.0, t2).value() ==
          doctest::Approx(0.0));
}

TEST_CASE("attention_map: channels [[1]],[[−2]] give [[5]]") {
    Tensor z = Tensor::from({2, 1, 1}, {1.0, -2.0});
    auto map = attention_map(z);
    CHECK(map.values.shape() == Shape{1, 1});
    CHECK(map.values.value() == doctest::Approx(5.0));
}

TEST_CASE("attention_map: zero feature gives zero map; single channel squares elementwise") {
    Tensor z = Tensor::zeros({3, 2, 2});
    auto map = attention_map(z);
    for (double v : map.values.data()) CHECK(v == 0.0);

    Tensor one = Tensor::from({1, 2, 2}, {1.0, -2.0, 3.0, -4.0});
    auto m1 = attention_map(one);
    CHECK(m1.values.data()[0] == doctest::Approx(1.0));
    CHECK(m1.values.data()[1] == doctest::Approx(4.0));
    CHECK(m1.values.data()[2] == doctest::Approx(9.0));
    CHECK(m1.values.data()[3] == doctest::Approx(16.0));
}

TEST_CASE("match_attention: equal maps give 0; scaled maps give 0; unit vectors give sqrt(2)") {
    AttentionMap a{Tensor::from({1, 2}, {1.0, 0.0}), 0};
    AttentionMap b{Tensor::from({1, 2}, {0.0, 1.0}), 0};
    AttentionMap a2{Tensor::from({1, 2}, {3.0, 0.0}), 0};
    CHECK(match_attention(a, a).value() == doctest::Approx(0.0));
    CHECK(match_attention(a, a2).value() == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(match_attention(a, b).value() == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("match_attention: zero-norm map counts a degeneracy and returns 0") {
    AttentionMap z{Tensor::zeros({2, 2}), 0};
    AttentionMap a{Tensor::from({2, 2}, {1.0, 0.0, 0.0, 0.0}), 0};
    LossCounters counters;
    CHECK(match_attention(z, a, &counters).value() == 0.0);
    CHECK(counters.zero_norm_normalizations == 1);
}

TEST_CASE("Eq. 8 scale invariance: c > 0 leaves the loss unchanged (100 trials)") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor base = random_tensor(rng, {4, 4}, 0.0, 2.0);
        Tensor other = random_tensor(rng, {4, 4}, 0.0, 2.0);
        const double c = rng.uniform(0.1, 10.0);
        AttentionMap ma{base, 0}, mb{other, 0};
        Tensor scaled = base.clone();
        for (double& v : scaled.mutable_data()) v *= c;
        AttentionMap mc{scaled, 0};
        const double l1 = match_attention(ma, mb).value();
        const double l2 = match_attention(mc, mb).value();
        CHECK(std::fabs(l1 - l2) <= 1e-10);
    }
}

TEST_CASE("match_attention_jacobians: teacher == student gives 0") {
    Rng rng(12);
    Network t = make_vgg1s({1, 8, 8}, 3, rng);
    Tensor x = random_tensor(rng, {1, 8, 8});
    Tape tape;
    const double v = match_attention_jacobians(t, t, x, 0, 0, 0, tape).value();
    CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("match_attention_jacobians: input pre-scaling cancels under normalization") {
    // student = teacher with conv weights doubled: on a linear trunk (no
    // relu between input and tap) attention-map gradients scale by a
    // positive factor, which normalization removes. Build nets whose tap is
    // the conv output itself.
    Rng rng(13);
    Network t;
    t.input_shape = {1, 6, 6};
    t.trunk.push_back(Layer::conv(1, 4, rng));
    t.trunk.push_back(Layer::global_avg_pool());
    t.heads.push_back(Layer::dense(4, 2, rng));
    t.feature_taps = {0};

    Network s = t.clone();
    for (double& v : s.trunk[0].params[0].mutable_data()) v *= 2.0;
    for (double& v : s.trunk[0].params[1].mutable_data()) v *= 2.0;

    Tensor x = random_tensor(rng, {1, 6, 6});
    Tape tape;
    const double v = match_attention_jacobians(t, s, x, 0, 0, 2, tape).value();
    CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("Eq. 9 scale invariance on the student side (100 trials)") {
    Rng rng(14);
    int done = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Network t;
        t.input_shape = {1, 5, 5};
        t.trunk.push_back(Layer::conv(1, 3, rng));
        t.trunk.push_back(Layer::global_avg_pool());
        t.heads.push_back(Layer::dense(3, 2, rng));
        t.feature_taps = {0};
        Network s = t.clone();
        const double c = rng.uniform(0.2, 5.0);
        for (double& v : s.trunk[0].params[0].mutable_data()) v *= c;
        for (double& v : s.trunk[0].params[1].mutable_data()) v *= c;
        Tensor x = random_tensor(rng, {1, 5, 5});
        Tape t1;
        const double v = match_attention_jacobians(t, s, x, 0, 0, 1, t1).value();
        CHECK(std::fabs(v) <= 1e-10);
        ++done;
    }
    CHECK(done == 100);
}

TEST_CASE("composite_loss: alpha-only is plain supervised CE") {
    Rng rng(15);
    Network s = make_mlp(3, {4}, 2, LayerKind::relu, rng);
    Batch batch;
    batch.inputs = {random_tensor(rng, {3}), random_tensor(rng, {3})};
    batch.labels = {0, 1};
    LossSpec spec;
    spec.alpha = 1.0;
    Tape tape;
    auto bd = composite_loss(spec, batch, nullptr, s, tape);
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
        Tensor soft = softmax_t(forward(s, batch.inputs[i]).logits, 1.0);
        expect -= std::log(soft.data()[batch.labels[i]]);
    }
    expect /= 2.0;
    CHECK(bd.total.value() == doctest::Approx(expect));
    CHECK(bd.terms[0].name == "ce");
    CHECK(bd.terms[0].weighted == doctest::Approx(expect));
}

TEST_CASE("composite_loss: beta-only matches activations; zero-weight terms are not computed") {
    Rng rng(16);
    Network t = make_mlp(3, {4}, 2, LayerKind::relu, rng);
    Network s = make_mlp(3, {3}, 2, LayerKind::relu, rng);
    Batch batch;
    batch.inputs = {random_tensor(rng, {3})};
    batch.labels = {0};
    LossSpec spec;
    spec.alpha = 0.0;
    spec.beta = 1.0;
    Tape tape;
    auto bd = composite_loss(spec, batch, &t, s, tape);
    Tensor tl = forward(t, batch.inputs[0]).logits;
    Tensor sl = forward(s, batch.inputs[0]).logits;
    CHECK(bd.total.value() ==
          doctest::Approx(match_activations_sq(tl, sl).value()));
    CHECK(bd.terms[2].raw == 0.0);  // jacobian term untouched
}

TEST_CASE("composite_loss: alpha=beta=gamma=1 equals the sum of the three terms") {
    Rng rng(17);
    Network t = make_mlp(2, {4}, 2, LayerKind::relu, rng);
    Network s = make_mlp(2, {3}, 2, LayerKind::relu, rng);
    Batch batch;
    batch.inputs = {random_tensor(rng, {2})};
    batch.labels = {1};
    LossSpec spec;
    spec.alpha = spec.beta = spec.gamma = 1.0;
    spec.sigma = 0.7;
    Tape tape;
    auto bd = composite_loss(spec, batch, &t, s, tape);
    double sum = 0.0;
    for (const auto& term : bd.terms) sum += term.weighted;
    CHECK(bd.total.value() == doctest::Approx(sum));

    // Prop-1 right-hand side, coded independently from detached pieces
    Tensor tl = forward(t, batch.inputs[0]).logits;
    Tensor sl = forward(s, batch.inputs[0]).logits;
    double act = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double d = tl.data()[i] - sl.data()[i];
        act += d * d;
    }
    CHECK(bd.terms[1].raw == doctest::Approx(act));
    Tape jt;
    Tensor xj = jt.variable(batch.inputs[0]);
    auto jac_t = jacobian(forward(t, xj).logits, xj);
    Tape js;
    Tensor xs = js.variable(batch.inputs[0]);
    auto jac_s = jacobian(forward(s, xs).logits, xs);
    double reg = 0.0;
    for (int i = 0; i < jac_t.matrix.numel(); ++i) {
        const double d = jac_t.matrix.data()[i] - jac_s.matrix.data()[i];
        reg += d * d;
    }
    CHECK(bd.terms[2].raw == doctest::Approx(spec.sigma * spec.sigma * reg));
}

TEST_CASE("composite_loss: missing teacher with matching terms is rejected") {
    Rng rng(18);
    Network s = make_mlp(2, {2}, 2, LayerKind::relu, rng);
    Batch batch;
    batch.inputs = {random_tensor(rng, {2})};
    batch.labels = {0};
    LossSpec spec;
    spec.beta = 1.0;
    Tape tape;
    CHECK_THROWS_WITH_AS(composite_loss(spec, batch, nullptr, s, tape),
                         doctest::Contains("teacher"), std::runtime_error);
}

TEST_CASE("gradients of every loss pass finite-difference checks (double backprop end-to-end)") {
    Rng rng(19);
    const double tol = 1e-4, step = 1e-5;

    // student parameters are leaves; the losses run their own forwards.
    // Perturb one parameter tensor at a time and compare against FD.
    auto fd_check = [&](Network& student, auto&& loss_value, int n_params_to_probe) {
        std::vector<std::pair<std::string, Tensor>> named = student.named_params();
        const double base = loss_value(student);
        (void)base;
        // analytic gradient
        Tape tape;
        auto bound = bind_params(student, tape);
        Tensor loss = loss_value.analytic(student, tape, bound);
        auto grads = backward(loss, bound);
        int probed = 0;
        for (std::size_t p = 0; p < named.size() && probed < n_params_to_probe; ++p, ++probed) {
            auto span = named[p].second.mutable_data();
            const auto g = grads[p].value.data();
            for (std::size_t i = 0; i < std::min<std::size_t>(span.size(), 4); ++i) {
                const double saved = span[i];
                span[i] = saved + step;
                const double up = loss_value(student);
                span[i] = saved - step;
                const double dn = loss_value(student);
                span[i] = saved;
                const double fd = (up - dn) / (2.0 * step);
                CHECK_MESSAGE(jmtest::close_rel(fd, g[i], tol),
                              strcat(named[p].first, "[", i, "]: analytic ", g[i], " vs fd ", fd));
            }
        }
    };

    Network teacher = make_mlp(3, {4}, 3, LayerKind::sigmoid, rng);
    Network student = make_mlp(3, {3}, 3, LayerKind::sigmoid, rng);
    Tensor x = random_tensor(rng, {3});
    Tensor y = Tensor::from({3}, {0.0, 1.0, 0.0});

    struct JacLoss {
        const Network* teacher;
        Tensor x;
        double operator()(const Network& s) const {
            Tape tape;
            return match_jacobians_sq(*teacher, s, x, {}, 0.8, tape).value();
        }
        Tensor analytic(const Network& s, Tape& tape, std::vector<Tensor>& bound) const {
            return match_jacobians_sq(*teacher, s, x, {}, 0.8, tape, &bound);
        }
    };
    fd_check(student, JacLoss{&teacher, x}, 3);

    struct CeJacLoss {
        const Network* teacher;
        Tensor x;
        double operator()(const Network& s) const {
            Tape tape;
            return distill_ce_with_jacobian(*teacher, s, x, 0.4, 1.5, tape).value();
        }
        Tensor analytic(const Network& s, Tape& tape, std::vector<Tensor>& bound) const {
            return distill_ce_with_jacobian(*teacher, s, x, 0.4, 1.5, tape, &bound);
        }
    };
    fd_check(student, CeJacLoss{&teacher, x}, 3);

    struct PenaltySq {
        Tensor x;
        double operator()(const Network& s) const {
            Tape tape;
            return jacobian_norm_penalty(s, x, Tensor(), LossFamily::squared_error, 0.6, 1.0,
                                         tape)
                .value();
        }
        Tensor analytic(const Network& s, Tape& tape, std::vector<Tensor>& bound) const {
            return jacobian_norm_penalty(s, x, Tensor(), LossFamily::squared_error, 0.6, 1.0,
                                         tape, &bound);
        }
    };
    fd_check(student, PenaltySq{x}, 3);

    struct PenaltyCe {
        Tensor x, y;
        double operator()(const Network& s) const {
            Tape tape;
            return jacobian_norm_penalty(s, x, y, LossFamily::cross_entropy, 0.6, 1.0, tape)
                .value();
        }
        Tensor analytic(const Network& s, Tape& tape, std::vector<Tensor>& bound) const {
            return jacobian_norm_penalty(s, x, y, LossFamily::cross_entropy, 0.6, 1.0, tape,
                                         &bound);
        }
    };
    fd_check(student, PenaltyCe{x, y}, 3);

    // attention-jacobian loss on conv nets
    Network conv_teacher = make_vgg1s({1, 6, 6}, 2, rng);
    Network conv_student = make_vgg1s({1, 6, 6}, 2, rng);
    Tensor xc = random_tensor(rng, {1, 6, 6});
    struct AttJacLoss {
        const Network* teacher;
        Tensor x;
        double operator()(const Network& s) const {
            Tape tape;
            return match_attention_jacobians(*teacher, s, x, 0, 0, 2, tape).value();
        }
        Tensor analytic(const Network& s, Tape& tape, std::vector<Tensor>& bound) const {
            return match_attention_jacobians(*teacher, s, x, 0, 0, 2, tape, &bound);
        }
    };
    fd_check(conv_student, AttJacLoss{&conv_teacher, xc}, 2);
}
