#include "jacmatch/losses.hpp"

#include <cmath>

namespace jm::losses {

using namespace jm::ad;

namespace {

constexpr double kSoftmaxFloor = 1e-8;

double value_sumsq(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v * v;
    return acc;
}

// two-headed students match teachers on the source head
nn::Head match_head(const nn::Network& net) {
    return net.head_count() == 2 ? nn::Head::source : nn::Head::only;
}

void check_finite(const Tensor& t, const char* term) {
    for (double v : t.data()) {
        JM_CHECK_NUMERIC(std::isfinite(v), term, ": non-finite result (", v, ")");
    }
}

// Teacher-side quantities never need parameter gradients: evaluate on a
// private tape and hand back detached values.
struct TeacherView {
    Tensor logits;                 // detached
    std::vector<Tensor> jac_rows;  // detached, w.r.t. x, one per selected index
};

TeacherView teacher_logits_and_rows(const nn::Network& teacher, const Tensor& x,
                                    const std::vector<int>& rows, bool softened,
                                    double temperature) {
    Tape tape;
    Tensor xt = tape.variable(x.detached());
    Tensor out = nn::forward(teacher, xt, match_head(teacher)).logits;
    if (softened) out = softmax_t(out, temperature);
    TeacherView view;
    view.logits = out.detached();
    for (int i : rows) {
        Tensor oi = index_select(out, i);
        view.jac_rows.push_back(grad(oi, xt).reshaped_view({static_cast<int>(x.numel())}));
    }
    return view;
}

std::vector<int> selected_indices(const JacobianStrategy& strategy, int k,
                                  const Tensor& teacher_logits, std::optional<int> label) {
    switch (strategy.mode) {
        case JacobianMode::full: {
            std::vector<int> all(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) all[static_cast<std::size_t>(i)] = i;
            return all;
        }
        case JacobianMode::correct_class:
            JM_CHECK(label.has_value(),
                     "match_jacobians_sq: correct-class strategy requires a label");
            JM_CHECK(*label >= 0 && *label < k, "match_jacobians_sq: label ", *label,
                     " out of range for ", k, " outputs");
            return {*label};
        case JacobianMode::max_output: {
            int best = 0;
            double best_mag = -1.0;
            const auto d = teacher_logits.data();
            for (int i = 0; i < k; ++i) {
                const double m = std::fabs(d[static_cast<std::size_t>(i)]);
                if (m > best_mag) {
                    best_mag = m;
                    best = i;
                }
            }
            return {best};
        }
        case JacobianMode::max_attention_pixel:
            JM_CHECK(false,
                     "match_jacobians_sq: max-attention-pixel strategy applies to attention "
                     "maps (use match_attention_jacobians)");
    }
    return {};
}

}  // namespace

void JacobianStrategy::validate(int attention_side) const {
    if (mode == JacobianMode::max_attention_pixel && pool_window != 0) {
        JM_CHECK_CONFIG(pool_window >= 1, "pool_window must be >= 1, got ", pool_window);
        if (attention_side > 0) {
            JM_CHECK_CONFIG(pool_window <= attention_side, "pool_window ", pool_window,
                            " exceeds attention map side ", attention_side);
        }
    } else if (mode != JacobianMode::max_attention_pixel) {
        JM_CHECK_CONFIG(pool_window == 0,
                        "pool_window is only meaningful in max-attention-pixel mode");
    }
}

void LossSpec::validate() const {
    JM_CHECK_CONFIG(alpha >= 0 && beta >= 0 && gamma >= 0, "loss weights must be >= 0");
    JM_CHECK_CONFIG(attention_beta >= 0 && attention_gamma >= 0,
                    "attention weights must be >= 0");
    JM_CHECK_CONFIG(penalty_lambda >= 0, "penalty_lambda must be >= 0");
    JM_CHECK_CONFIG(mse_alpha >= 0, "mse_alpha must be >= 0");
    JM_CHECK_CONFIG(sigma >= 0, "sigma must be >= 0, got ", sigma);
    JM_CHECK_CONFIG(temperature > 0, "temperature must be > 0, got ", temperature);
}

Tensor match_activations_sq(const Tensor& teacher_logits, const Tensor& student_logits) {
    JM_CHECK(teacher_logits.numel() == student_logits.numel(),
             "match_activations_sq: logit lengths differ (", teacher_logits.numel(), " vs ",
             student_logits.numel(), "); the outputs of any two architectures must agree");
    return sum_all(square(sub(teacher_logits, student_logits)));
}

Tensor match_jacobians_sq(const nn::Network& teacher, const nn::Network& student,
                          const Tensor& x, const JacobianStrategy& strategy, double sigma,
                          Tape& tape, const std::vector<Tensor>* student_bound,
                          std::optional<int> label, bool* sigma_zero_warning) {
    if (sigma == 0.0) {
        if (sigma_zero_warning != nullptr) *sigma_zero_warning = true;
        return Tensor::scalar(0.0);
    }
    // teacher pass picks the indices, then provides constant rows
    Tape probe;
    Tensor xp = probe.variable(x.detached());
    Tensor t_logits = nn::forward(teacher, xp, match_head(teacher)).logits;
    const int k = t_logits.shape()[0];
    const std::vector<int> rows = selected_indices(strategy, k, t_logits, label);
    TeacherView view = teacher_logits_and_rows(teacher, x, rows, /*softened=*/false, 1.0);

    Tensor xs = tape.variable(x.detached());
    Tensor s_logits = nn::forward(student, xs, match_head(student), student_bound).logits;
    JM_CHECK(s_logits.shape()[0] == k, "match_jacobians_sq: output lengths differ (", k, " vs ",
             s_logits.shape()[0], ")");

    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Tensor si = index_select(s_logits, rows[r]);
        Tensor s_row = grad(si, xs, /*create_graph=*/true);
        if (s_row.ndim() != 1) s_row = reshape(s_row, {static_cast<int>(x.numel())});
        Tensor diff = sub(view.jac_rows[r], s_row);
        acc = add(acc, sum_all(square(diff)));
    }
    return scale(acc, sigma * sigma);
}

namespace {

Tensor ce_soft_targets_term(const Tensor& teacher_soft_const, const Tensor& student_soft,
                            LossCounters* counters) {
    bool clamped = false;
    for (double v : student_soft.data()) clamped |= v < kSoftmaxFloor;
    if (clamped && counters != nullptr) ++counters->softmax_clamps;
    Tensor s = clamp_min(student_soft, kSoftmaxFloor);
    return neg(sum_all(mul(teacher_soft_const, log(s))));
}

}  // namespace

namespace {

// the -sigma^2 sum_i (dTs_i/dx . dSs_i/dx) / Ss_i piece of Eq-2-style
// distillation, as a (negative-signed) tape scalar
Tensor ce_jacobian_reg_term(const nn::Network& teacher, const nn::Network& student,
                            const Tensor& x, double sigma, double temperature, Tape& tape,
                            const std::vector<Tensor>* student_bound, LossCounters* counters) {
    Tape probe;
    Tensor xp = probe.variable(x.detached());
    const int k = nn::forward(teacher, xp, match_head(teacher)).logits.shape()[0];
    std::vector<int> all(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) all[static_cast<std::size_t>(i)] = i;
    TeacherView view = teacher_logits_and_rows(teacher, x, all, /*softened=*/true, temperature);

    Tensor xs = tape.variable(x.detached());
    Tensor s_logits = nn::forward(student, xs, match_head(student), student_bound).logits;
    JM_CHECK(s_logits.shape()[0] == k, "distill_ce_with_jacobian: output lengths differ (", k,
             " vs ", s_logits.shape()[0], ")");
    Tensor s_soft = softmax_t(s_logits, temperature);
    bool any_clamped = false;
    for (double v : s_soft.data()) any_clamped |= v < kSoftmaxFloor;
    if (any_clamped && counters != nullptr) ++counters->softmax_clamps;
    Tensor s_clamped = clamp_min(s_soft, kSoftmaxFloor);
    Tensor reg = Tensor::scalar(0.0);
    for (int i = 0; i < k; ++i) {
        Tensor si = index_select(s_soft, i);
        Tensor s_row = grad(si, xs, /*create_graph=*/true);
        if (s_row.ndim() != 1) s_row = reshape(s_row, {static_cast<int>(x.numel())});
        Tensor inner = dot_all(view.jac_rows[static_cast<std::size_t>(i)], s_row);
        reg = add(reg, div(inner, index_select(s_clamped, i)));
    }
    return neg(scale(reg, sigma * sigma));
}

}  // namespace

Tensor distill_ce_with_jacobian(const nn::Network& teacher, const nn::Network& student,
                                const Tensor& x, double sigma, double temperature, Tape& tape,
                                const std::vector<Tensor>* student_bound,
                                LossCounters* counters) {
    Tensor t_soft;
    {
        Tape probe;
        Tensor xt = probe.variable(x.detached());
        t_soft = softmax_t(nn::forward(teacher, xt, match_head(teacher)).logits, temperature)
                     .detached();
    }
    Tensor xs = tape.variable(x.detached());
    Tensor s_logits = nn::forward(student, xs, match_head(student), student_bound).logits;
    JM_CHECK(s_logits.numel() == t_soft.numel(), "distill_ce_with_jacobian: output lengths differ (",
             t_soft.numel(), " vs ", s_logits.numel(), ")");
    Tensor loss = ce_soft_targets_term(t_soft, softmax_t(s_logits, temperature), counters);
    if (sigma != 0.0) {
        loss = add(loss, ce_jacobian_reg_term(teacher, student, x, sigma, temperature, tape,
                                              student_bound, counters));
    }
    check_finite(loss, "distill_ce_with_jacobian");
    return loss;
}

Tensor jacobian_norm_penalty(const nn::Network& student, const Tensor& x, const Tensor& y,
                             LossFamily family, double sigma, double temperature, Tape& tape,
                             const std::vector<Tensor>* student_bound, LossCounters* counters) {
    Tensor xs = tape.variable(x.detached());
    Tensor s_logits = nn::forward(student, xs, match_head(student), student_bound).logits;
    const int k = s_logits.shape()[0];

    if (family == LossFamily::squared_error) {
        Tensor acc = Tensor::scalar(0.0);
        for (int i = 0; i < k; ++i) {
            Tensor si = index_select(s_logits, i);
            Tensor row = grad(si, xs, /*create_graph=*/true);
            if (row.ndim() != 1) row = reshape(row, {static_cast<int>(x.numel())});
            acc = add(acc, sum_all(square(row)));
        }
        return scale(acc, sigma * sigma);
    }

    JM_CHECK(y.defined() && y.numel() == k, "jacobian_norm_penalty: CE family requires targets of length ",
             k);
    Tensor s_soft = softmax_t(s_logits, temperature);
    bool any_clamped = false;
    for (double v : s_soft.data()) any_clamped |= v < kSoftmaxFloor;
    if (any_clamped && counters != nullptr) ++counters->softmax_clamps;
    Tensor s_clamped = clamp_min(s_soft, kSoftmaxFloor);
    Tensor acc = Tensor::scalar(0.0);
    const auto yv = y.data();
    for (int i = 0; i < k; ++i) {
        if (yv[static_cast<std::size_t>(i)] == 0.0) continue;  // Eq. 3 needs only y_i != 0
        Tensor si = index_select(s_soft, i);
        Tensor row = grad(si, xs, /*create_graph=*/true);
        if (row.ndim() != 1) row = reshape(row, {static_cast<int>(x.numel())});
        Tensor term = div(sum_all(square(row)), square(index_select(s_clamped, i)));
        acc = add(acc, scale(term, yv[static_cast<std::size_t>(i)]));
    }
    return scale(acc, sigma * sigma);
}

AttentionMap attention_map(const Tensor& feature, int source_tap) {
    JM_CHECK(feature.ndim() == 3 && feature.shape()[0] >= 1,
             "attention_map: feature must be (C,H,W) with at least one channel, got ",
             shape_str(feature.shape()));
    AttentionMap map;
    map.values = channel_sum(square(feature));
    map.source_tap = source_tap;
    return map;
}

Tensor match_attention(const AttentionMap& teacher_map, const AttentionMap& student_map,
                       LossCounters* counters) {
    JM_CHECK(teacher_map.values.shape() == student_map.values.shape(),
             "match_attention: spatial shapes differ, ", shape_str(teacher_map.values.shape()),
             " vs ", shape_str(student_map.values.shape()));
    const int n = static_cast<int>(teacher_map.values.numel());
    Tensor at = reshape(teacher_map.values, {n});
    Tensor as = reshape(student_map.values, {n});
    const double nt = std::sqrt(value_sumsq(at));
    const double ns = std::sqrt(value_sumsq(as));
    if (nt == 0.0 || ns == 0.0) {
        if (counters != nullptr) ++counters->zero_norm_normalizations;
        return Tensor::scalar(0.0);
    }
    Tensor diff = sub(div(at, l2_norm(at)), div(as, l2_norm(as)));
    return l2_norm(diff);
}

Tensor match_attention_jacobians(const nn::Network& teacher, const nn::Network& student,
                                 const Tensor& x, int teacher_tap, int student_tap,
                                 int pool_window, Tape& tape,
                                 const std::vector<Tensor>* student_bound,
                                 LossCounters* counters) {
    JM_CHECK(teacher_tap >= 0 && teacher_tap < static_cast<int>(teacher.feature_taps.size()),
             "match_attention_jacobians: teacher tap ", teacher_tap, " out of range");
    JM_CHECK(student_tap >= 0 && student_tap < static_cast<int>(student.feature_taps.size()),
             "match_attention_jacobians: student tap ", student_tap, " out of range");

    // teacher side: pooled attention map, argmax pixel, input-gradient
    Tape t_tape;
    Tensor xt = t_tape.variable(x.detached());
    auto t_fwd = nn::forward(teacher, xt, teacher.head_count() == 1 ? nn::Head::only
                                                                    : nn::Head::source);
    Tensor t_att = attention_map(t_fwd.taps[static_cast<std::size_t>(teacher_tap)]).values;
    const int side = t_att.shape()[0];
    if (pool_window <= 0) pool_window = JacobianStrategy::default_pool_window(side);
    JM_CHECK(pool_window >= 1 && pool_window <= side, "match_attention_jacobians: pool window ",
             pool_window, " invalid for attention side ", side);
    Tensor t_pooled = avgpool2d(reshape(t_att, {1, side, t_att.shape()[1]}), pool_window, 1);

    // argmax over the pooled map; ties take the lowest row-major index
    int best_idx = 0;
    {
        const auto d = t_pooled.data();
        double best = d[0];
        for (std::size_t i = 1; i < d.size(); ++i) {
            if (d[i] > best) {
                best = d[i];
                best_idx = static_cast<int>(i);
            }
        }
    }
    const int pw = t_pooled.shape()[2];
    const int pi = best_idx / pw;
    const int pj = best_idx % pw;

    Tensor t_pixel = index_select(reshape(t_pooled, {t_pooled.shape()[1] * pw}), best_idx);
    Tensor g_t = grad(t_pixel, xt).reshaped_view({static_cast<int>(x.numel())});
    double gt_norm = 0.0;
    for (double v : g_t.data()) gt_norm += v * v;
    gt_norm = std::sqrt(gt_norm);
    if (gt_norm == 0.0) {
        if (counters != nullptr) ++counters->zero_norm_normalizations;
        return Tensor::scalar(0.0);
    }
    Tensor g_t_unit = Tensor::zeros(g_t.shape());
    for (std::int64_t i = 0; i < g_t.numel(); ++i)
        g_t_unit.mutable_data()[i] = g_t.data()[i] / gt_norm;

    // student side on the training tape, same pixel index
    Tensor xs = tape.variable(x.detached());
    auto s_fwd = nn::forward(student, xs,
                             student.head_count() == 1 ? nn::Head::only : nn::Head::source,
                             student_bound);
    Tensor s_att = attention_map(s_fwd.taps[static_cast<std::size_t>(student_tap)]).values;
    JM_CHECK(s_att.shape() == t_att.shape(),
             "match_attention_jacobians: attention shapes differ, teacher ",
             shape_str(t_att.shape()), " vs student ", shape_str(s_att.shape()));
    Tensor s_pooled = avgpool2d(reshape(s_att, {1, side, s_att.shape()[1]}), pool_window, 1);
    Tensor s_pixel = index_select(reshape(s_pooled, {t_pooled.shape()[1] * pw}), pi * pw + pj);
    Tensor g_s = grad(s_pixel, xs, /*create_graph=*/true);
    if (g_s.ndim() != 1) g_s = reshape(g_s, {static_cast<int>(x.numel())});

    double gs_norm = 0.0;
    for (double v : g_s.data()) gs_norm += v * v;
    if (gs_norm == 0.0) {
        if (counters != nullptr) ++counters->zero_norm_normalizations;
        return Tensor::scalar(0.0);
    }
    Tensor diff = sub(g_t_unit, div(g_s, l2_norm(g_s)));
    return sum_all(square(diff));
}

Tensor cross_entropy_hard(const Tensor& student_logits, int label, double temperature,
                          LossCounters* counters) {
    JM_CHECK(label >= 0 && label < student_logits.shape()[0], "cross_entropy_hard: label ",
             label, " out of range for ", student_logits.shape()[0], " classes");
    Tensor soft = softmax_t(student_logits, temperature);
    bool clamped = soft.data()[static_cast<std::size_t>(label)] < kSoftmaxFloor;
    if (clamped && counters != nullptr) ++counters->softmax_clamps;
    return neg(log(clamp_min(index_select(soft, label), kSoftmaxFloor)));
}

LossBreakdown composite_loss(const LossSpec& spec, const Batch& batch,
                             const nn::Network* teacher, const nn::Network& student, Tape& tape,
                             const std::vector<Tensor>* student_bound) {
    spec.validate();
    JM_CHECK(!batch.inputs.empty(), "composite_loss: empty batch");
    JM_CHECK(batch.inputs.size() == batch.labels.size(),
             "composite_loss: inputs and labels differ in length");
    const bool needs_teacher = spec.beta > 0 || spec.gamma > 0 || spec.attention_beta > 0 ||
                               spec.attention_gamma > 0;
    JM_CHECK(!needs_teacher || teacher != nullptr,
             "composite_loss: teacher network required by the configured terms");

    // two-headed (LwF) students: ground truth on the target head, teacher
    // matching on the source head; one-headed students use their only head
    const nn::Head ce_head = student.head_count() == 2 ? nn::Head::target : nn::Head::only;
    const nn::Head m_head = match_head(student);

    struct Accum {
        const char* name;
        double weight;
        Tensor sum = Tensor::scalar(0.0);
        bool active = false;
    };
    Accum ce{"ce", spec.alpha};
    Accum act{"match_activations", spec.beta};
    Accum jac{"match_jacobians", spec.gamma};
    Accum att{"match_attention", spec.attention_beta};
    Accum att_jac{"match_attention_jacobians", spec.attention_gamma};
    Accum penalty{"jacobian_norm_penalty", spec.penalty_lambda};
    Accum mse{"mse", spec.mse_alpha};

    LossBreakdown out;
    auto run_term = [&](Accum& term, auto&& fn) {
        if (term.weight <= 0) return;
        term.active = true;
        try {
            term.sum = add(term.sum, fn());
        } catch (const jm::NumericError& e) {
            throw jm::NumericError(strcat("term '", term.name, "': ", e.what()));
        } catch (const std::exception& e) {
            throw std::runtime_error(strcat("term '", term.name, "': ", e.what()));
        }
    };

    const double inv_b = 1.0 / static_cast<double>(batch.inputs.size());
    for (std::size_t ex = 0; ex < batch.inputs.size(); ++ex) {
        const Tensor& x = batch.inputs[ex];
        const int label = batch.labels[ex];

        Tensor s_ce_logits;
        if (spec.alpha > 0) {
            Tensor xs = tape.variable(x.detached());
            s_ce_logits = nn::forward(student, xs, ce_head, student_bound).logits;
        }
        Tensor s_match_logits;
        Tensor t_logits;
        if (spec.beta > 0) {
            Tensor xs = tape.variable(x.detached());
            s_match_logits = nn::forward(student, xs, m_head, student_bound).logits;
            Tape probe;
            Tensor xt = probe.variable(x.detached());
            t_logits = nn::forward(*teacher, xt, match_head(*teacher)).logits.detached();
        }

        run_term(ce, [&] { return cross_entropy_hard(s_ce_logits, label, 1.0, &out.counters); });
        run_term(mse, [&] {
            Tensor xs = tape.variable(x.detached());
            Tensor logits = nn::forward(student, xs, ce_head, student_bound).logits;
            Tensor onehot = Tensor::zeros(logits.shape());
            onehot.mutable_data()[static_cast<std::size_t>(label)] = 1.0;
            return sum_all(square(sub(onehot, logits)));
        });
        run_term(act, [&] {
            if (spec.family == LossFamily::squared_error) {
                return match_activations_sq(t_logits, s_match_logits);
            }
            return ce_soft_targets_term(softmax_t(t_logits, spec.temperature).detached(),
                                        softmax_t(s_match_logits, spec.temperature),
                                        &out.counters);
        });
        run_term(jac, [&] {
            if (spec.family == LossFamily::squared_error) {
                return match_jacobians_sq(*teacher, student, x, spec.jac_strategy, spec.sigma,
                                          tape, student_bound, label, nullptr);
            }
            return ce_jacobian_reg_term(*teacher, student, x, spec.sigma, spec.temperature,
                                        tape, student_bound, &out.counters);
        });
        run_term(penalty, [&] {
            Tensor y;
            if (spec.family == LossFamily::cross_entropy) {
                const std::size_t head_idx = student.head_count() == 2 ? 1 : 0;
                y = Tensor::zeros({student.heads[head_idx].params[0].shape()[0]});
                y.mutable_data()[static_cast<std::size_t>(label)] = 1.0;
            }
            return jacobian_norm_penalty(student, x, y, spec.family, spec.sigma,
                                         spec.temperature, tape, student_bound, &out.counters);
        });
        if (!spec.tap_pairs.empty()) {
            run_term(att, [&] {
                Tensor acc = Tensor::scalar(0.0);
                for (auto [tt, st] : spec.tap_pairs) {
                    Tape probe;
                    Tensor xt = probe.variable(x.detached());
                    auto t_fwd = nn::forward(*teacher, xt, match_head(*teacher));
                    AttentionMap t_map = attention_map(
                        t_fwd.taps[static_cast<std::size_t>(tt)].detached(), tt);
                    Tensor xs2 = tape.variable(x.detached());
                    auto s_fwd = nn::forward(student, xs2, m_head, student_bound);
                    AttentionMap s_map =
                        attention_map(s_fwd.taps[static_cast<std::size_t>(st)], st);
                    acc = add(acc, match_attention(t_map, s_map, &out.counters));
                }
                return acc;
            });
            run_term(att_jac, [&] {
                Tensor acc = Tensor::scalar(0.0);
                for (auto [tt, st] : spec.tap_pairs) {
                    acc = add(acc, match_attention_jacobians(*teacher, student, x, tt, st,
                                                             spec.jac_strategy.pool_window, tape,
                                                             student_bound, &out.counters));
                }
                return acc;
            });
        }
    }

    Tensor total = Tensor::scalar(0.0);
    for (Accum* term : {&ce, &mse, &act, &jac, &att, &att_jac, &penalty}) {
        TermValue tv;
        tv.name = term->name;
        tv.weight = term->weight;
        if (term->active) {
            Tensor mean = scale(term->sum, inv_b);
            tv.raw = mean.value();
            tv.weighted = term->weight * tv.raw;
            total = add(total, scale(mean, term->weight));
        }
        out.terms.push_back(tv);
    }
    JM_CHECK_NUMERIC(std::isfinite(total.value()), "composite_loss: non-finite total");
    out.total = total;
    return out;
}

}  // namespace jm::losses
