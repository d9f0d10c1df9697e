#include "cscon/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "cscon/loss.hpp"

namespace cscon {

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

namespace {

// Mean/max pooling over each sample's token rows, accumulated in double.
void pool_tokens(const std::vector<float>& tokens, std::int64_t batch, std::int64_t n,
                 std::int64_t d, std::vector<std::vector<float>>& out) {
  for (std::int64_t b = 0; b < batch; ++b) {
    std::vector<float> feat(static_cast<std::size_t>(2 * d));
    for (std::int64_t c = 0; c < d; ++c) {
      double mean = 0.0;
      float maxv = tokens[static_cast<std::size_t>((b * n) * d + c)];
      for (std::int64_t r = 0; r < n; ++r) {
        const float v = tokens[static_cast<std::size_t>((b * n + r) * d + c)];
        mean += v;
        maxv = std::max(maxv, v);
      }
      feat[static_cast<std::size_t>(c)] = static_cast<float>(mean / static_cast<double>(n));
      feat[static_cast<std::size_t>(d + c)] = maxv;
    }
    out.push_back(std::move(feat));
  }
}

}  // namespace

FeatureSet extract_features(Model& model, const std::vector<PointCloud>& clouds) {
  NoGradGuard ng;
  const auto& cfg = model.config();
  FeatureSet fs;
  fs.dim = 2 * cfg.dim;
  constexpr std::int64_t kChunk = 64;
  const auto total = static_cast<std::int64_t>(clouds.size());
  for (std::int64_t off = 0; off < total; off += kChunk) {
    const std::int64_t b = std::min<std::int64_t>(kChunk, total - off);
    std::vector<PatchSet> batch;
    batch.reserve(b);
    for (std::int64_t i = 0; i < b; ++i) {
      const auto& cloud = clouds[static_cast<std::size_t>(off + i)];
      batch.push_back(patchify(cloud, cfg.n_patches, cfg.patch_size, /*start=*/0));
      fs.labels.push_back(cloud.label);
    }
    auto e_c = model.embed_centers(make_center_tensor<float>(batch));
    auto e_s = model.embed_patches(make_patch_tensor<float>(batch));
    auto tokens = model.encode_tokens(add(e_c, e_s), b, Branch::center_masked);
    pool_tokens(tokens.values(), b, cfg.n_patches, cfg.dim, fs.features);
  }
  return fs;
}

std::vector<float> extract_global(Model& model, const PointCloud& cloud) {
  std::vector<PointCloud> one{cloud};
  return extract_features(model, one).features.front();
}

// ---------------------------------------------------------------------------
// Probe heads
// ---------------------------------------------------------------------------

namespace {

int num_classes(const FeatureSet& a, const FeatureSet& b) {
  int n = 0;
  for (int l : a.labels) n = std::max(n, l + 1);
  for (int l : b.labels) n = std::max(n, l + 1);
  return n;
}

TensorT<float> feature_tensor(const FeatureSet& fs) {
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(fs.size() * fs.dim));
  for (const auto& f : fs.features) data.insert(data.end(), f.begin(), f.end());
  return TensorT<float>::from_vector(Shape{fs.size(), fs.dim}, std::move(data));
}

struct Mlp3Head {
  TensorT<float> w1, b1, w2, b2, w3, b3;
  std::int64_t hidden = 0;

  static Mlp3Head create(ParamStore& store, std::int64_t in_dim, std::int64_t hidden,
                         int classes, Rng& rng) {
    Mlp3Head h;
    h.hidden = hidden;
    h.w1 = store.create("head.w1", Shape{in_dim, hidden}, rng, 0.02);
    h.b1 = store.create_const("head.b1", Shape{1, hidden}, 0.0f);
    h.w2 = store.create("head.w2", Shape{hidden, hidden}, rng, 0.02);
    h.b2 = store.create_const("head.b2", Shape{1, hidden}, 0.0f);
    h.w3 = store.create("head.w3", Shape{hidden, classes}, rng, 0.02);
    h.b3 = store.create_const("head.b3", Shape{1, classes}, 0.0f);
    return h;
  }

  TensorT<float> forward(const TensorT<float>& x, double dropout, Rng* rng) const {
    auto apply_dropout = [&](TensorT<float> t) {
      if (rng == nullptr || dropout <= 0.0) return t;
      auto mask = TensorT<float>::zeros(t.shape());
      const float kept = static_cast<float>(1.0 / (1.0 - dropout));
      for (auto& v : mask.values()) v = (rng->uniform() >= dropout) ? kept : 0.0f;
      return mul(t, mask);
    };
    auto t = apply_dropout(gelu(add(matmul(x, w1), b1)));
    t = apply_dropout(gelu(add(matmul(t, w2), b2)));
    return add(matmul(t, w3), b3);
  }
};

double evaluate_logits(const std::vector<float>& logits, std::int64_t rows, std::int64_t cols,
                       const std::vector<int>& labels) {
  std::int64_t correct = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows);
}

double train_head_once(const FeatureSet& train, const FeatureSet& test,
                       const ProbeOptions& opt, bool mlp3, std::uint64_t seed) {
  const int classes = num_classes(train, test);
  Rng rng(mix64(seed, 0x4ead));
  ParamStore store;
  TensorT<float> lin_w, lin_b;
  Mlp3Head head;
  if (mlp3) {
    head = Mlp3Head::create(store, train.dim, std::max<std::int64_t>(train.dim / 2, 8),
                            classes, rng);
  } else {
    lin_w = store.create("head.w", Shape{train.dim, classes}, rng, 0.02);
    lin_b = store.create_const("head.b", Shape{1, classes}, 0.0f);
  }
  AdamW optimizer(store);
  auto features = feature_tensor(train);

  const std::int64_t n = train.size();
  const std::int64_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  const std::int64_t total_steps = steps_per_epoch * opt.epochs;
  const std::int64_t warmup_steps = steps_per_epoch * std::max(1, opt.epochs / 10);

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::int64_t off = 0; off < n; off += opt.batch_size, ++step) {
      const std::int64_t bsz = std::min<std::int64_t>(opt.batch_size, n - off);
      std::vector<std::int64_t> rows(order.begin() + off, order.begin() + off + bsz);
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (auto r : rows) labels.push_back(train.labels[static_cast<std::size_t>(r)]);
      auto x = gather_rows(features, std::move(rows));
      store.zero_grads();
      auto logits = mlp3 ? head.forward(x, opt.dropout, &rng)
                         : add(matmul(x, lin_w), lin_b);
      auto loss = cross_entropy(logits, labels);
      loss.backward();
      optimizer.step(lr_at_step(opt.lr, 0.0, step, warmup_steps, total_steps),
                     opt.weight_decay);
    }
  }

  NoGradGuard ng;
  auto x = feature_tensor(test);
  auto logits = mlp3 ? head.forward(x, 0.0, nullptr) : add(matmul(x, lin_w), lin_b);
  return evaluate_logits(logits.values(), test.size(), classes, test.labels);
}

ProbeResult run_probe(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& opt,
                      bool mlp3) {
  if (train.size() == 0 || test.size() == 0)
    throw InvalidArgument("probe: empty feature set");
  ProbeResult r;
  for (int s = 0; s < opt.n_seeds; ++s)
    r.per_seed.push_back(
        train_head_once(train, test, opt, mlp3, mix64(opt.seed, static_cast<std::uint64_t>(s))));
  r.mean = mean_of(r.per_seed);
  r.stddev = stddev_of(r.per_seed);
  return r;
}

}  // namespace

ProbeResult probe_linear(const FeatureSet& train, const FeatureSet& test,
                         const ProbeOptions& opt) {
  return run_probe(train, test, opt, /*mlp3=*/false);
}

ProbeResult probe_mlp3(const FeatureSet& train, const FeatureSet& test,
                       const ProbeOptions& opt) {
  return run_probe(train, test, opt, /*mlp3=*/true);
}

// ---------------------------------------------------------------------------
// Full fine-tuning
// ---------------------------------------------------------------------------

double finetune_full(Model& model, const std::vector<PointCloud>& train_clouds,
                     const std::vector<PointCloud>& test_clouds, const FinetuneOptions& opt) {
  if (train_clouds.empty() || test_clouds.empty())
    throw InvalidArgument("finetune_full: empty dataset");
  const auto& cfg = model.config();
  int classes = 0;
  for (const auto& c : train_clouds) classes = std::max(classes, c.label + 1);
  for (const auto& c : test_clouds) classes = std::max(classes, c.label + 1);

  // Patchification is augmentation-free here, so compute it once.
  std::vector<PatchSet> train_patches, test_patches;
  train_patches.reserve(train_clouds.size());
  for (const auto& c : train_clouds)
    train_patches.push_back(patchify(c, cfg.n_patches, cfg.patch_size, 0));
  test_patches.reserve(test_clouds.size());
  for (const auto& c : test_clouds)
    test_patches.push_back(patchify(c, cfg.n_patches, cfg.patch_size, 0));

  Rng rng(mix64(opt.seed, 0xf1f7));
  ParamStore head_store;
  auto head = Mlp3Head::create(head_store, 2 * cfg.dim,
                               std::max<std::int64_t>(cfg.dim, 8), classes, rng);

  auto params = AdamW::collect(model.params());
  for (auto& e : head_store.entries()) params.push_back(e.tensor);
  AdamW optimizer(params);

  auto forward_pooled = [&](const std::vector<PatchSet>& batch, Rng* drop_rng) {
    const auto b = static_cast<std::int64_t>(batch.size());
    auto e_c = model.embed_centers(make_center_tensor<float>(batch));
    auto e_s = model.embed_patches(make_patch_tensor<float>(batch));
    auto tokens = model.encode_tokens(add(e_c, e_s), b, Branch::center_masked, drop_rng);
    auto t3 = reshape(tokens, Shape{b, cfg.n_patches, cfg.dim});
    return concat_last(reduce_mean(t3, 1), reduce_max(t3, 1));  // (b, 2*dim)
  };

  const std::int64_t n = static_cast<std::int64_t>(train_patches.size());
  const std::int64_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  const std::int64_t total_steps = steps_per_epoch * opt.epochs;
  const std::int64_t warmup_steps = steps_per_epoch * std::max(1, opt.epochs / 10);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::int64_t off = 0; off < n; off += opt.batch_size, ++step) {
      const std::int64_t bsz = std::min<std::int64_t>(opt.batch_size, n - off);
      std::vector<PatchSet> batch;
      std::vector<int> labels;
      for (std::int64_t i = 0; i < bsz; ++i) {
        const auto idx = static_cast<std::size_t>(order[off + i]);
        batch.push_back(train_patches[idx]);
        labels.push_back(train_clouds[idx].label);
      }
      model.params().zero_grads();
      head_store.zero_grads();
      auto pooled = forward_pooled(batch, cfg.drop_path > 0.0 ? &rng : nullptr);
      auto loss = cross_entropy(head.forward(pooled, opt.dropout, &rng), labels);
      if (!std::isfinite(loss.item()))
        throw TrainingError("finetune_full: non-finite loss at step " + std::to_string(step));
      loss.backward();
      clip_grad_norm(params, 10.0);
      optimizer.step(lr_at_step(opt.lr, 0.0, step, warmup_steps, total_steps),
                     opt.weight_decay);
    }
  }

  NoGradGuard ng;
  std::int64_t correct = 0, total = 0;
  constexpr std::int64_t kChunk = 64;
  for (std::size_t off = 0; off < test_patches.size(); off += kChunk) {
    const auto bsz = std::min<std::size_t>(kChunk, test_patches.size() - off);
    std::vector<PatchSet> batch(test_patches.begin() + off, test_patches.begin() + off + bsz);
    auto logits = head.forward(forward_pooled(batch, nullptr), 0.0, nullptr);
    for (std::size_t i = 0; i < bsz; ++i) {
      const float* row = logits.values().data() + i * classes;
      std::int64_t best = 0;
      for (int c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      correct += (best == test_clouds[off + i].label) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Few-shot episodes
// ---------------------------------------------------------------------------

Episode sample_episode(const FeatureSet& pool, int way, int shot, int query_per_class,
                       Rng& rng) {
  if (way < 1 || shot < 1 || query_per_class < 1)
    throw InvalidArgument("sample_episode: way, shot, query must be >= 1");
  std::map<int, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < pool.size(); ++i)
    by_class[pool.labels[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<int> eligible;
  for (const auto& [cls, rows] : by_class)
    if (static_cast<int>(rows.size()) >= shot + query_per_class) eligible.push_back(cls);
  if (static_cast<int>(eligible.size()) < way)
    throw InvalidArgument("sample_episode: only " + std::to_string(eligible.size()) +
                          " classes have " + std::to_string(shot + query_per_class) +
                          " samples, need " + std::to_string(way));
  auto pick = rng.sample_without_replacement(static_cast<std::int64_t>(eligible.size()), way);
  Episode ep;
  for (int w = 0; w < way; ++w) {
    const int cls = eligible[static_cast<std::size_t>(pick[w])];
    ep.classes.push_back(cls);
    auto rows = by_class[cls];
    rng.shuffle(rows);
    for (int s = 0; s < shot; ++s) {
      ep.support_rows.push_back(rows[static_cast<std::size_t>(s)]);
      ep.support_labels.push_back(w);
    }
    for (int q = 0; q < query_per_class; ++q) {
      ep.query_rows.push_back(rows[static_cast<std::size_t>(shot + q)]);
      ep.query_labels.push_back(w);
    }
  }
  return ep;
}

FewshotResult fewshot(Model& model, const std::vector<PointCloud>& pool, int way, int shot,
                      int trials, int query_per_class, const ProbeOptions& opt) {
  if (trials < 1) throw InvalidArgument("fewshot: trials must be >= 1");
  auto features = extract_features(model, pool);
  FewshotResult result;
  for (int t = 0; t < trials; ++t) {
    Rng rng(mix64(opt.seed, 0xfe57, static_cast<std::uint64_t>(t)));
    auto ep = sample_episode(features, way, shot, query_per_class, rng);
    auto subset = [&](const std::vector<std::int64_t>& rows, const std::vector<int>& labels) {
      FeatureSet fs;
      fs.dim = features.dim;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        fs.features.push_back(features.features[static_cast<std::size_t>(rows[i])]);
        fs.labels.push_back(labels[i]);
      }
      return fs;
    };
    ProbeOptions trial_opt = opt;
    trial_opt.n_seeds = 1;
    trial_opt.seed = mix64(opt.seed, 0x7ea1, static_cast<std::uint64_t>(t));
    auto acc = probe_linear(subset(ep.support_rows, ep.support_labels),
                            subset(ep.query_rows, ep.query_labels), trial_opt);
    result.per_trial.push_back(acc.mean);
  }
  result.mean = mean_of(result.per_trial);
  result.stddev = stddev_of(result.per_trial);
  return result;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

void export_embeddings(Model& model, const std::vector<PointCloud>& clouds,
                       const std::filesystem::path& path) {
  auto features = extract_features(model, clouds);
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot open embedding file for writing");
  char buf[32];
  for (std::int64_t i = 0; i < features.size(); ++i) {
    os << features.labels[static_cast<std::size_t>(i)];
    for (float v : features.features[static_cast<std::size_t>(i)]) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
      os << '\t' << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError(path.string(), "embedding write failed");
}

}  // namespace cscon
