#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "ctseg/ops.hpp"

namespace ctseg {

template <typename T>
struct LossConfig {
  T focal_alpha = T(0.5);
  T focal_gamma = T(2);
  T dice_eps = T(1e-5);
  std::vector<int64_t> dice_classes;  // empty = all foreground classes
  T lambda0_dis = T(10);
  T lambda0_ssl = T(0.1);
  int t_max = 100;
  bool fsl = false;
  bool no_kd = false;
  bool no_psv = false;
  bool no_ctl = false;
};

namespace detail {

inline std::vector<int64_t> resolve_class_set(const std::vector<int64_t>& set, int64_t channels) {
  if (!set.empty()) return set;
  std::vector<int64_t> out;
  for (int64_t c = 1; c < channels; ++c) out.push_back(c);
  return out;
}

}  // namespace detail

// Soft Dice loss: mean over the class set of 1 - (2*sum(P*Y)+eps)/(sum(P)+sum(Y)+eps),
// sums taken over batch and voxels. Y is treated as a constant target.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target,
                    const std::vector<int64_t>& class_set, T eps = T(1e-5)) {
  detail::check_same_shape(probs, target, "dice_loss");
  require(probs.shape().size() >= 2, "dice_loss: need [B,C,...] tensors");
  const int64_t batch = probs.extent(0);
  const int64_t channels = probs.extent(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < probs.shape().size(); ++i) spatial *= probs.shape()[i];
  const auto classes = detail::resolve_class_set(class_set, channels);
  require(!classes.empty(), "dice_loss: empty class set");
  for (int64_t c : classes)
    require(c >= 0 && c < channels, "dice_loss: class " + std::to_string(c) + " out of range");

  const T* pp = probs.data();
  const T* pt = target.data();
  std::vector<T> inter(classes.size(), T(0)), denom(classes.size(), T(0));
  for (size_t s = 0; s < classes.size(); ++s) {
    const int64_t c = classes[s];
    T n = T(0), dp = T(0), dt = T(0);
    for (int64_t b = 0; b < batch; ++b) {
      const T* p = pp + (b * channels + c) * spatial;
      const T* t = pt + (b * channels + c) * spatial;
      for (int64_t v = 0; v < spatial; ++v) {
        n += p[v] * t[v];
        dp += p[v];
        dt += t[v];
      }
    }
    inter[s] = n;
    denom[s] = dp + dt;
  }
  T loss = T(0);
  for (size_t s = 0; s < classes.size(); ++s)
    loss += T(1) - (T(2) * inter[s] + eps) / (denom[s] + eps);
  loss /= static_cast<T>(classes.size());

  Tensor<T> out = Tensor<T>::scalar(loss);
  detail::attach_backward<T>(
      out, {probs.node()},
      [pn = probs.node(), tvp = target.shared_values(), inter, denom, classes, eps, batch,
       channels, spatial](const std::vector<T>& g) {
        const std::vector<T>& tv = *tvp;
        auto& gp = pn->grad_buffer();
        const T norm = g[0] / static_cast<T>(classes.size());
        for (size_t s = 0; s < classes.size(); ++s) {
          const int64_t c = classes[s];
          const T d = denom[s] + eps;
          const T num = T(2) * inter[s] + eps;
          for (int64_t b = 0; b < batch; ++b) {
            const T* t = tv.data() + (b * channels + c) * spatial;
            T* q = gp.data() + (b * channels + c) * spatial;
            for (int64_t v = 0; v < spatial; ++v)
              q[v] += norm * (num - T(2) * t[v] * d) / (d * d);
          }
        }
      });
  return out;
}

// Focal loss: mean over voxels of -alpha*(1-p_t)^gamma * ln(p_t), with p_t the
// predicted probability at the true class, clamped to [1e-12, 1].
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const Tensor<T>& target, T alpha = T(0.5),
                     T gamma = T(2)) {
  detail::check_same_shape(probs, target, "focal_loss");
  require(probs.shape().size() >= 2, "focal_loss: need [B,C,...] tensors");
  const int64_t batch = probs.extent(0);
  const int64_t channels = probs.extent(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < probs.shape().size(); ++i) spatial *= probs.shape()[i];
  const int64_t voxels = batch * spatial;
  const T p_min = T(1e-12);

  const T* pp = probs.data();
  const T* pt = target.data();
  T loss = T(0);
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t base = b * channels * spatial;
    for (int64_t v = 0; v < spatial; ++v) {
      T p = T(0);
      for (int64_t c = 0; c < channels; ++c)
        p += pp[base + c * spatial + v] * pt[base + c * spatial + v];
      p = std::clamp(p, p_min, T(1));
      loss += -alpha * std::pow(T(1) - p, gamma) * std::log(p);
    }
  }
  loss /= static_cast<T>(voxels);

  Tensor<T> out = Tensor<T>::scalar(loss);
  detail::attach_backward<T>(
      out, {probs.node()},
      [pn = probs.node(), pvp = probs.shared_values(), tvp = target.shared_values(), alpha,
       gamma, p_min, batch, channels, spatial, voxels](const std::vector<T>& g) {
        const std::vector<T>& pv = *pvp;
        const std::vector<T>& tv = *tvp;
        auto& gp = pn->grad_buffer();
        const T norm = g[0] / static_cast<T>(voxels);
        for (int64_t b = 0; b < batch; ++b) {
          const int64_t base = b * channels * spatial;
          for (int64_t v = 0; v < spatial; ++v) {
            T p = T(0);
            for (int64_t c = 0; c < channels; ++c)
              p += pv[base + c * spatial + v] * tv[base + c * spatial + v];
            if (p < p_min || p > T(1)) continue;  // clamped: zero subgradient
            const T onem = T(1) - p;
            const T term1 = std::pow(onem, gamma) / p;
            const T term2 = (gamma == T(0) || onem <= T(0))
                                ? T(0)
                                : gamma * std::pow(onem, gamma - T(1)) * std::log(p);
            const T dphi = -alpha * (term1 - term2);
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t i = base + c * spatial + v;
              if (tv[i] != T(0)) gp[i] += norm * dphi * tv[i];
            }
          }
        }
      });
  return out;
}

template <typename T>
Tensor<T> supervised_loss(const Tensor<T>& probs, const Tensor<T>& target,
                          const LossConfig<T>& cfg) {
  return add(dice_loss(probs, target, cfg.dice_classes, cfg.dice_eps),
             focal_loss(probs, target, cfg.focal_alpha, cfg.focal_gamma));
}

// Channel argmax per voxel, one-hot encoded, detached. Ties break toward the
// lowest class index.
template <typename T>
Tensor<T> hard_pseudo_label(const Tensor<T>& probs) {
  require(probs.shape().size() >= 2, "hard_pseudo_label: need [B,C,...] tensors");
  const int64_t batch = probs.extent(0);
  const int64_t channels = probs.extent(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < probs.shape().size(); ++i) spatial *= probs.shape()[i];
  Tensor<T> out(probs.shape());
  const T* pp = probs.data();
  T* po = out.data();
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t base = b * channels * spatial;
    for (int64_t v = 0; v < spatial; ++v) {
      int64_t best = 0;
      T hi = pp[base + v];
      for (int64_t c = 1; c < channels; ++c) {
        const T x = pp[base + c * spatial + v];
        if (x > hi) {
          hi = x;
          best = c;
        }
      }
      po[base + best * spatial + v] = T(1);
    }
  }
  return out;
}

// Elementwise average of two probability maps; detached.
template <typename T>
Tensor<T> teacher_mean(const Tensor<T>& p1, const Tensor<T>& p2) {
  detail::check_same_shape(p1, p2, "teacher_mean");
  Tensor<T> out(p1.shape());
  const T* a = p1.data();
  const T* b = p2.data();
  T* o = out.data();
  for (int64_t i = 0; i < p1.size(); ++i) o[i] = (a[i] + b[i]) * T(0.5);
  return out;
}

// Symmetric cross teaching: each teacher is supervised by the other's
// detached hard pseudo-label, so gradient flows only into the prediction
// argument of each Dice term.
template <typename T>
Tensor<T> cross_teaching_loss(const Tensor<T>& p_t1, const Tensor<T>& p_t2,
                              const LossConfig<T>& cfg) {
  Tensor<T> label2 = hard_pseudo_label(p_t2);
  Tensor<T> label1 = hard_pseudo_label(p_t1);
  return add(dice_loss(p_t1, label2, cfg.dice_classes, cfg.dice_eps),
             dice_loss(p_t2, label1, cfg.dice_classes, cfg.dice_eps));
}

template <typename T>
Tensor<T> pseudo_supervision_loss(const Tensor<T>& p_student, const Tensor<T>& teacher_mean_probs,
                                  const LossConfig<T>& cfg) {
  return dice_loss(p_student, hard_pseudo_label(teacher_mean_probs), cfg.dice_classes,
                   cfg.dice_eps);
}

// KL(teacher || student): mean over voxels of sum_c q ln(q/p) with q the
// detached teacher mean and p the student prediction clamped away from zero.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& p_student, const Tensor<T>& teacher_mean_probs) {
  detail::check_same_shape(p_student, teacher_mean_probs, "kd_loss");
  require(p_student.shape().size() >= 2, "kd_loss: need [B,C,...] tensors");
  const int64_t batch = p_student.extent(0);
  const int64_t channels = p_student.extent(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < p_student.shape().size(); ++i) spatial *= p_student.shape()[i];
  const int64_t voxels = batch * spatial;
  const T p_min = T(1e-12);

  const T* pp = p_student.data();
  const T* pq = teacher_mean_probs.data();
  T loss = T(0);
  for (int64_t i = 0; i < p_student.size(); ++i) {
    const T q = pq[i];
    if (q <= T(0)) continue;
    const T p = std::max(pp[i], p_min);
    loss += q * std::log(q / p);
  }
  loss /= static_cast<T>(voxels);

  Tensor<T> out = Tensor<T>::scalar(loss);
  detail::attach_backward<T>(
      out, {p_student.node()},
      [pn = p_student.node(), pvp = p_student.shared_values(),
       qvp = teacher_mean_probs.shared_values(), p_min, voxels](const std::vector<T>& g) {
        const std::vector<T>& pv = *pvp;
        const std::vector<T>& qv = *qvp;
        auto& gp = pn->grad_buffer();
        const T norm = g[0] / static_cast<T>(voxels);
        for (size_t i = 0; i < pv.size(); ++i) {
          if (qv[i] <= T(0) || pv[i] < p_min) continue;
          gp[i] += -norm * qv[i] / pv[i];
        }
      });
  return out;
}

// lambda(t) = lambda0 * exp(-5 * (1 - t/t_max)^2), the Gaussian warm-up.
inline double warmup_weight(double t, double t_max, double lambda0) {
  require(t_max >= 1, "warmup_weight: t_max must be >= 1");
  require(t >= 0 && t <= t_max,
          "warmup_weight: t = " + std::to_string(t) + " outside [0, " + std::to_string(t_max) + "]");
  const double u = 1.0 - t / t_max;
  return lambda0 * std::exp(-5.0 * u * u);
}

// lr(epoch) = lr0 * (1 - epoch/epoch_max)^0.9, applied at epoch start.
inline double poly_lr(double epoch, double epoch_max, double lr0) {
  require(epoch_max >= 1, "poly_lr: epoch_max must be >= 1");
  require(epoch >= 0 && epoch <= epoch_max, "poly_lr: epoch = " + std::to_string(epoch) +
                                                " outside [0, " + std::to_string(epoch_max) + "]");
  return lr0 * std::pow(1.0 - epoch / epoch_max, 0.9);
}

// Scalar parts of one branch objective. Inactive terms are empty tensors;
// they are skipped entirely (no graph edges), not multiplied by zero.
template <typename T>
struct ObjectiveParts {
  Tensor<T> seg;
  Tensor<T> ctl;
  Tensor<T> psv;
  Tensor<T> kd;
  Tensor<T> total;

  T seg_value() const { return seg.empty() ? T(0) : seg.item(); }
  T ctl_value() const { return ctl.empty() ? T(0) : ctl.item(); }
  T psv_value() const { return psv.empty() ? T(0) : psv.item(); }
  T kd_value() const { return kd.empty() ? T(0) : kd.item(); }
};

// Predictions of the active models on one batch; absent models are empty.
template <typename T>
struct BranchPredictions {
  Tensor<T> student;
  Tensor<T> teacher1;
  Tensor<T> teacher2;

  bool has_student() const { return !student.empty(); }
  bool has_two_teachers() const { return !teacher1.empty() && !teacher2.empty(); }
  bool has_any_teacher() const { return !teacher1.empty() || !teacher2.empty(); }

  // Teachers' mean (detached); the single teacher's prediction when only one.
  Tensor<T> teachers_mean() const {
    if (has_two_teachers()) return teacher_mean(teacher1, teacher2);
    const Tensor<T>& t = teacher1.empty() ? teacher2 : teacher1;
    return Tensor<T>(t.shape(), t.values());
  }
};

// Labeled branch: L_seg summed over every active model, plus the KD term.
template <typename T>
ObjectiveParts<T> labeled_objective(const BranchPredictions<T>& preds, const Tensor<T>& target,
                                    double t, const LossConfig<T>& cfg) {
  require(!target.empty(), "labeled_objective: missing labels on the labeled branch");
  ObjectiveParts<T> parts;
  for (const Tensor<T>* p : {&preds.teacher1, &preds.teacher2, &preds.student}) {
    if (p->empty()) continue;
    Tensor<T> l = supervised_loss(*p, target, cfg);
    parts.seg = parts.seg.empty() ? l : add(parts.seg, l);
  }
  require(!parts.seg.empty(), "labeled_objective: no active models");
  parts.total = parts.seg;
  if (!cfg.no_kd && preds.has_student() && preds.has_any_teacher()) {
    parts.kd = kd_loss(preds.student, preds.teachers_mean());
    const T lambda_dis = static_cast<T>(warmup_weight(t, cfg.t_max, cfg.lambda0_dis));
    parts.total = add(parts.total, scale(parts.kd, lambda_dis));
  }
  return parts;
}

// Unlabeled branch: cross teaching between teachers, pseudo-supervision of
// the student, and the KD term.
template <typename T>
ObjectiveParts<T> unlabeled_objective(const BranchPredictions<T>& preds, double t,
                                      const LossConfig<T>& cfg) {
  ObjectiveParts<T> parts;
  if (!cfg.no_ctl && preds.has_two_teachers())
    parts.ctl = cross_teaching_loss(preds.teacher1, preds.teacher2, cfg);
  if (!cfg.no_psv && preds.has_student() && preds.has_any_teacher())
    parts.psv = pseudo_supervision_loss(preds.student, preds.teachers_mean(), cfg);
  if (!cfg.no_kd && preds.has_student() && preds.has_any_teacher())
    parts.kd = kd_loss(preds.student, preds.teachers_mean());

  for (const Tensor<T>* term : {&parts.ctl, &parts.psv}) {
    if (term->empty()) continue;
    parts.total = parts.total.empty() ? *term : add(parts.total, *term);
  }
  if (!parts.kd.empty()) {
    const T lambda_dis = static_cast<T>(warmup_weight(t, cfg.t_max, cfg.lambda0_dis));
    Tensor<T> weighted = scale(parts.kd, lambda_dis);
    parts.total = parts.total.empty() ? weighted : add(parts.total, weighted);
  }
  return parts;
}

// Loss = L_labeled + lambda_ssl * L_unlabeled for one batch pair. A
// default-constructed `unlabeled` (empty total) means the branch is absent.
template <typename T>
Tensor<T> combined_objectives(const ObjectiveParts<T>& labeled, const ObjectiveParts<T>& unlabeled,
                              double t, const LossConfig<T>& cfg) {
  Tensor<T> total = labeled.total;
  require(!total.empty(), "combined_objectives: labeled branch is empty");
  if (!cfg.fsl && !unlabeled.total.empty()) {
    const T lambda_ssl = static_cast<T>(warmup_weight(t, cfg.t_max, cfg.lambda0_ssl));
    total = add(total, scale(unlabeled.total, lambda_ssl));
  }
  return total;
}

}  // namespace ctseg
