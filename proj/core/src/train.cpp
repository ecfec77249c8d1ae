#include "cdnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cdnet {

void TrainConfig::validate() const {
  if (lr0 <= 0.0 || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
    throw ShapeError("train rates out of range");
  if (batch < 1 || epochs < 1 || lr_step < 1)
    throw ShapeError("batch, epochs, and lr_step must be >= 1");
  if (lr_factor <= 0.0 || lr_factor > 1.0)
    throw ShapeError("lr_factor must lie in (0, 1]");
  if (head_lr_mult <= 0.0) throw ShapeError("head_lr_mult must be positive");
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 1) throw ShapeError("epochs are 1-based");
  const int decays = (epoch - 1) / cfg.lr_step;
  switch (cfg.lr_mode) {
    case LrMode::kCompound:
      return cfg.lr0 * std::pow(cfg.lr_factor, decays);
    case LrMode::kInitial:
      return decays == 0 ? cfg.lr0 : cfg.lr0 * cfg.lr_factor;
  }
  throw ShapeError("unknown lr mode");
}

namespace {

double sum_side(const LossBreakdown& bd, double LossTerms::*field) {
  double s = 0.0;
  for (const auto& t : bd.side) s += t.*field;
  return s;
}

}  // namespace

std::string format_step_log(const StepLog& s) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "step %lld epoch %d lr %.17g total %.17g wbce %.17g ssim %.17g "
                "siou %.17g",
                static_cast<long long>(s.step), s.epoch, s.lr, s.losses.total,
                s.losses.fused.wbce + sum_side(s.losses, &LossTerms::wbce),
                s.losses.fused.ssim + sum_side(s.losses, &LossTerms::ssim),
                s.losses.fused.siou + sum_side(s.losses, &LossTerms::siou));
  return buf;
}

Trainer::Trainer(ChangeNet& model, TrainConfig cfg, LossConfig loss_cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      loss_cfg_(loss_cfg),
      data_rng_(cfg_.seed + 1) {
  cfg_.validate();
  loss_cfg_.validate();
}

LossBreakdown Trainer::train_step(const std::vector<const SamplePair*>& batch) {
  if (batch.empty()) throw ShapeError("empty training batch");
  std::vector<const ImageU8*> t1s, t2s, masks;
  for (const SamplePair* p : batch) {
    t1s.push_back(&p->t1);
    t2s.push_back(&p->t2);
    masks.push_back(&p->mask);
  }
  Tensor t1 = batch_images(t1s);
  Tensor t2 = batch_images(t2s);
  Tensor gt({static_cast<int64_t>(batch.size()), 1, batch[0]->mask.h,
             batch[0]->mask.w},
            0.0);
  {
    const int64_t plane = batch[0]->mask.h * batch[0]->mask.w;
    for (size_t n = 0; n < batch.size(); ++n)
      for (int64_t i = 0; i < plane; ++i)
        gt[static_cast<int64_t>(n) * plane + i] =
            batch[n]->mask.data[static_cast<size_t>(i)] ? 1.0 : 0.0;
  }

  model_.params().zero_grad();
  LossBreakdown bd;
  Graph g;
  {
    Graph::Scope scope(g);
    SideOutputs out = model_.forward(t1, t2, Mode::kTrain);
    Tensor loss = hybrid_loss(out, gt, loss_cfg_, &bd);
    if (!std::isfinite(bd.total))
      throw NumericError("non-finite training loss at step " +
                         std::to_string(step_ + 1));
    g.backward(loss);
  }
  ++step_;
  apply_sgd(lr_at(cfg_, epoch_));
  return bd;
}

void Trainer::apply_sgd(double lr) {
  for (Param* p : model_.params().params()) {
    const double rate = lr * (p->backbone ? 1.0 : cfg_.head_lr_mult);
    auto& v = p->value.data();
    auto& m = p->momentum.data();
    if (!p->value.has_grad()) {
      // Unreached parameters still experience weight decay and momentum.
      for (size_t i = 0; i < v.size(); ++i) {
        m[i] = snap32(cfg_.momentum * m[i]);
        v[i] = snap32(v[i] - rate * m[i] - rate * cfg_.weight_decay * v[i]);
      }
      continue;
    }
    const auto& grad = p->value.grad_ref();
    for (size_t i = 0; i < v.size(); ++i) {
      m[i] = snap32(cfg_.momentum * m[i] + grad[i]);
      v[i] = snap32(v[i] - rate * m[i] - rate * cfg_.weight_decay * v[i]);
    }
  }
}

TrainResult Trainer::train(const std::vector<SamplePair>& data,
                           int64_t max_steps, std::ostream* log_stream,
                           bool augment_data) {
  if (data.empty()) throw DataError("training dataset is empty");
  TrainResult result;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (epoch_ = 1; epoch_ <= cfg_.epochs; ++epoch_) {
    // Fisher-Yates with the deterministic data stream.
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(data_rng_.uniform_int(
                    static_cast<int64_t>(i)))]);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg_.batch)) {
      const size_t take =
          std::min(static_cast<size_t>(cfg_.batch), order.size() - at);
      if (take == 1 && order.size() > 1) continue;  // batch stats need >= 2
      std::vector<SamplePair> staged;
      std::vector<const SamplePair*> batch;
      staged.reserve(take);
      for (size_t k = 0; k < take; ++k) {
        const SamplePair& src = data[order[at + k]];
        if (augment_data)
          staged.push_back(augment(src, data_rng_));
        else
          staged.push_back(src);
      }
      for (const auto& s : staged) batch.push_back(&s);

      StepLog entry;
      entry.epoch = epoch_;
      entry.lr = lr_at(cfg_, epoch_);
      entry.losses = train_step(batch);
      entry.step = step_;
      if (log_stream) (*log_stream) << format_step_log(entry) << '\n';
      result.log.push_back(entry);
      if (max_steps >= 0 && step_ >= max_steps) {
        result.steps = step_;
        return result;
      }
    }
  }
  result.steps = step_;
  return result;
}

std::vector<Prediction> predict(ChangeNet& model,
                                const std::vector<SamplePair>& pairs,
                                double threshold) {
  std::vector<Prediction> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    Tensor t1 = image_to_tensor(p.t1);
    Tensor t2 = image_to_tensor(p.t2);
    SideOutputs so = model.forward(t1, t2, Mode::kEval);
    Prediction pr;
    pr.id = p.id;
    pr.prob = sigmoid(so.fused);
    pr.prob.check_finite("prediction probabilities");
    pr.binary = tensor_to_mask(pr.prob, threshold);
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace cdnet
