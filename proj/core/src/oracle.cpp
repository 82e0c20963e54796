#include "altermoma/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace altermoma {

namespace {

double mean_loss(Graph& g, const std::vector<Inputs>& eval_inputs) {
  if (eval_inputs.empty()) throw std::invalid_argument("oracle: no eval batches");
  double acc = 0.0;
  for (const Inputs& in : eval_inputs) acc += g.forward(in);
  return acc / static_cast<double>(eval_inputs.size());
}

}  // namespace

double exact_mask_delta(Graph& g, Parameter& p, std::size_t index,
                        const std::vector<Inputs>& eval_inputs) {
  if (index >= p.size())
    throw std::invalid_argument("exact_mask_delta: index " + std::to_string(index) +
                                " out of range for " + p.id);
  const double base = mean_loss(g, eval_inputs);
  const double saved = p.mask[index];
  p.mask[index] = 0.0;
  const double masked = mean_loss(g, eval_inputs);
  p.mask[index] = saved;
  return std::fabs(base - masked);
}

double exact_mask_delta(FusionModel& m, const std::string& param_id, std::size_t index,
                        const std::vector<Batch>& eval_batches) {
  if (!m.modality().all_unmasked())
    throw std::invalid_argument("exact_mask_delta: model must be fully unmasked");
  std::vector<Inputs> inputs;
  inputs.reserve(eval_batches.size());
  for (const Batch& b : eval_batches)
    inputs.push_back({{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}});
  return exact_mask_delta(m.graph(), m.param(param_id), index, inputs);
}

double fd_gradient_check(Graph& g, const Inputs& batch, double step, double abs_floor) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient_check: step must be positive");
  g.forward(batch);
  const GradMap analytic = g.backward();

  double worst = 0.0;
  for (Parameter* p : g.parameters()) {
    const std::vector<double>& ad = analytic.at(p->id);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->values.data[i];
      p->values.data[i] = saved + step;
      const double up = g.forward(batch);
      p->values.data[i] = saved - step;
      const double down = g.forward(batch);
      p->values.data[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double diff = std::fabs(fd - ad[i]);
      if (diff <= abs_floor) continue;
      worst = std::max(worst, diff / std::max(std::fabs(fd), std::fabs(ad[i])));
    }
  }
  return worst;
}

double fd_gradient_check(FusionModel& m, const Batch& b, double step, double abs_floor) {
  const Inputs in{{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}};
  return fd_gradient_check(m.graph(), in, step, abs_floor);
}

namespace {

// Replays B SGD steps from the given initial values and returns the mean
// eval loss at the endpoint. Leaves the trainable values at the endpoint.
double replay(Graph& g, const std::vector<Parameter*>& trainable,
              const std::vector<std::vector<double>>& theta0,
              const std::vector<Inputs>& train_seq, const std::vector<Inputs>& eval_inputs,
              double eps) {
  for (std::size_t j = 0; j < trainable.size(); ++j) trainable[j]->values.data = theta0[j];
  for (const Inputs& in : train_seq) {
    g.forward(in);
    sgd_step(trainable, g.backward(), eps);
  }
  return mean_loss(g, eval_inputs);
}

}  // namespace

double prop1_error(Graph& g, const std::vector<Parameter*>& trainable,
                   const std::vector<Inputs>& train_seq, const std::vector<Inputs>& eval_inputs,
                   double eps, double fd_step) {
  if (trainable.empty()) throw std::invalid_argument("prop1_error: no trainable parameters");
  if (!(fd_step > 0.0)) throw std::invalid_argument("prop1_error: step must be positive");
  std::size_t total = 0;
  for (const Parameter* p : trainable) total += p->size();
  if (total > 50)
    throw std::invalid_argument("prop1_error: " + std::to_string(total) +
                                " parameters exceed the replay budget of 50");
  if (train_seq.empty()) return 0.0;
  if (!(eps > 0.0)) throw std::invalid_argument("prop1_error: eps must be positive");

  std::vector<std::vector<double>> theta0(trainable.size());
  for (std::size_t j = 0; j < trainable.size(); ++j) theta0[j] = trainable[j]->values.data;

  // Approximation under test: theta_0 * grad at the trajectory endpoint.
  replay(g, trainable, theta0, train_seq, eval_inputs, eps);
  const GradMap end_grads = averaged_gradients(g, eval_inputs);

  double sq = 0.0;
  for (std::size_t j = 0; j < trainable.size(); ++j) {
    Parameter* p = trainable[j];
    const std::vector<double>& ge = end_grads.at(p->id);
    for (std::size_t i = 0; i < p->size(); ++i) {
      std::vector<std::vector<double>> bumped = theta0;
      bumped[j][i] = theta0[j][i] + fd_step;
      const double up = replay(g, trainable, bumped, train_seq, eval_inputs, eps);
      bumped[j][i] = theta0[j][i] - fd_step;
      const double down = replay(g, trainable, bumped, train_seq, eval_inputs, eps);
      const double total_deriv = (up - down) / (2.0 * fd_step);
      const double gap = theta0[j][i] * total_deriv - theta0[j][i] * ge[i];
      sq += gap * gap;
    }
  }
  for (std::size_t j = 0; j < trainable.size(); ++j) trainable[j]->values.data = theta0[j];
  return std::sqrt(sq);
}

double prop1_error(FusionModel& m, const MultiModalDataset& ds, std::size_t steps, double eps,
                   const PruneConfig& cfg) {
  std::vector<Inputs> eval_inputs;
  for (const Batch& b : make_eval_batches(ds, cfg))
    eval_inputs.push_back({{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}});
  std::vector<Inputs> train_seq;
  for (const Batch& b : batches(ds, cfg.batch_size, cfg.seed + 2, steps))
    train_seq.push_back({{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}});
  return prop1_error(m.graph(), m.parameters(), train_seq, eval_inputs, eps);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

void write_check_report(const std::vector<CheckRow>& rows, const std::string& path,
                        const std::string& trailing_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "check,seed,value,threshold,pass\n";
  char buf[32];
  for (const CheckRow& r : rows) {
    out << r.name << "," << r.seed << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.threshold);
    out << buf << "," << (r.pass ? "pass" : "fail") << "\n";
  }
  if (!trailing_comment.empty()) out << trailing_comment << "\n";
  if (!out) throw io_error("write failed for " + path);
}

}  // namespace altermoma
