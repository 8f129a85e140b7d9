#include "rrg/train.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rrg/errors.h"
#include "rrg/log.h"
#include "rrg/optimizer.h"

namespace rrg {

Dataset load_split(const std::filesystem::path& corpus, const std::string& split, const ModelConfig& cfg) {
  const auto manifest = corpus / (split + ".tsv");
  if (!std::filesystem::exists(manifest)) throw IoError("split '" + split + "' not found: " + manifest.string());
  Dataset d;
  d.entries = load_manifest(manifest, cfg.labels);
  for (const auto& e : d.entries) {
    Image img = read_pgm(e.image_path);
    if (img.height != cfg.image_size || img.width != cfg.image_size)
      throw DataError(e.image_path.string() + ": image is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", config expects " + std::to_string(cfg.image_size));
    d.images.push_back(std::move(img));
  }
  return d;
}

TeacherForcing teacher_forcing(const std::string& report, const Vocabulary& vocab, std::size_t max_len) {
  auto ids = tokenize(report, vocab);
  if (max_len == 0) throw std::invalid_argument("max report length must be positive");
  if (ids.size() + 1 > max_len) {
    log::warn("report of " + std::to_string(ids.size()) + " tokens truncated to " + std::to_string(max_len - 1));
    ids.resize(max_len - 1);
  }
  TeacherForcing tf;
  tf.prefix.push_back(kBos);
  tf.prefix.insert(tf.prefix.end(), ids.begin(), ids.end());
  tf.targets = ids;
  tf.targets.push_back(kEos);
  return tf;
}

LossParts supervised_loss(const Image& image, const std::string& report, const LabelVector& labels,
                          const ModelState& model, double lambda, const Tensor& prompt_features) {
  if (lambda < 0.0) throw std::invalid_argument("supervised_loss: lambda must be >= 0");
  if (labels.size() != model.config.labels)
    throw DataError("sample has " + std::to_string(labels.size()) + " labels, model predicts " +
                    std::to_string(model.config.labels));
  const VisualFeatures visual = extract_visual(model, image, prompt_features);
  const MultimodalPrompt prompt = prompt_from_visual(model, visual);
  const TeacherForcing tf = teacher_forcing(report, model.vocab, model.generator.max_len);
  const Tensor l_report = ops::cross_entropy_from_logits(decoder_logits(prompt, tf.prefix, model.generator), tf.targets);
  std::vector<double> targets(labels.begin(), labels.end());
  const Tensor l_disease =
      ops::bce_with_logits(disease_classify(visual.global, visual.regions, model.generator), targets);
  LossParts out;
  out.report = l_report.item();
  out.disease = l_disease.item();
  out.total = ops::add(l_report, ops::scale(l_disease, lambda));
  return out;
}

Vocabulary build_model_vocab(const std::vector<ManifestEntry>& train, const std::vector<RegionDescription>& regions,
                             const ModelConfig& cfg) {
  std::vector<std::string> corpus;
  for (const auto& e : train) corpus.push_back(e.report);
  for (const auto& r : regions) corpus.push_back(r.description);
  corpus.push_back(cfg.instruction);
  return build_vocab(corpus, 1, cfg.vocab_cap);
}

EpochLog evaluate_loss(const ModelState& model, const Dataset& data, double lambda) {
  EpochLog out;
  if (data.size() == 0) return out;
  const Tensor feats = encode_prompt_features(model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto parts = supervised_loss(data.images[i], data.entries[i].report, data.entries[i].labels, model, lambda, feats);
    out.val_loss += parts.total.item();
    out.val_report += parts.report;
    out.val_disease += parts.disease;
  }
  const double n = static_cast<double>(data.size());
  out.val_loss /= n;
  out.val_report /= n;
  out.val_disease /= n;
  return out;
}

namespace {

std::vector<std::vector<double>> snapshot(const ModelState& m) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : m.named()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(ModelState& m, const std::vector<std::vector<double>>& values) {
  auto params = m.named();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto d = params[i].second.mutable_data();
    std::copy(values[i].begin(), values[i].end(), d.begin());
  }
}

}  // namespace

TrainResult train_supervised(ModelState& model, const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                             const std::function<void(const ModelState&, const EpochLog&)>& on_best) {
  if (train.size() == 0) throw DataError("training split is empty");
  Optimizer opt(model.named(), cfg.optimizer, cfg.lr, cfg.grad_clip);
  opt.zero_grad();
  TrainResult result;
  std::vector<std::vector<double>> best;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      // Region-description features are shared by the whole minibatch:
      // encode once, let each sample tape accumulate into a detached leaf,
      // then push that gradient back through the text encoder.
      Tape prompt_tape;
      Tensor feats;
      {
        TapeScope scope(prompt_tape);
        feats = encode_prompt_features(model);
      }
      Tensor leaf = feats.detach();
      leaf.set_requires_grad(true);
      for (std::size_t j = b; j < end; ++j) {
        const std::size_t i = order[j];
        Tape tape;
        TapeScope scope(tape);
        const auto parts =
            supervised_loss(train.images[i], train.entries[i].report, train.entries[i].labels, model, cfg.lambda, leaf);
        tape.backward(ops::scale(parts.total, inv));
        rec.train_loss += parts.total.item();
        rec.train_report += parts.report;
        rec.train_disease += parts.disease;
      }
      {
        TapeScope scope(prompt_tape);
        const Tensor upstream = Tensor::from(leaf.shape(), {leaf.grad().begin(), leaf.grad().end()});
        prompt_tape.backward(ops::sum(ops::mul(feats, upstream)));
      }
      opt.step();
    }
    const double n = static_cast<double>(train.size());
    rec.train_loss /= n;
    rec.train_report /= n;
    rec.train_disease /= n;
    const EpochLog v = evaluate_loss(model, val.size() ? val : train, cfg.lambda);
    rec.val_loss = v.val_loss;
    rec.val_report = v.val_report;
    rec.val_disease = v.val_disease;
    result.log.push_back(rec);
    std::ostringstream msg;
    msg << "epoch " << epoch << " train " << rec.train_loss << " (report " << rec.train_report << ", disease "
        << rec.train_disease << ") val " << rec.val_loss << " (report " << rec.val_report << ")";
    log::info(msg.str());
    if (best.empty() || rec.val_loss < result.best_val) {
      best = snapshot(model);
      result.best_epoch = epoch;
      result.best_val = rec.val_loss;
      if (on_best) on_best(model, rec);
    }
  }
  if (!best.empty()) restore(model, best);
  return result;
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,train_report,train_disease,val_loss,val_report,val_disease\n";
  for (const auto& e : log)
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.train_report) << ','
       << format_double(e.train_disease) << ',' << format_double(e.val_loss) << ',' << format_double(e.val_report)
       << ',' << format_double(e.val_disease) << '\n';
  return os.str();
}

std::string generate_for_image(const ModelState& model, const Image& image) {
  const Tensor feats = encode_prompt_features(model);
  return generate_report(prompt_from_visual(model, extract_visual(model, image, feats)), model.generator, model.vocab)
      .text;
}

std::vector<std::string> generate_reports(const ModelState& model, const Dataset& data) {
  const Tensor feats = encode_prompt_features(model);
  std::vector<std::string> out(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto prompt = prompt_from_visual(model, extract_visual(model, data.images[i], feats));
    out[i] = generate_report(prompt, model.generator, model.vocab).text;
  }
  return out;
}

std::vector<double> disease_probabilities(const ModelState& model, const Image& image) {
  const Tensor feats = encode_prompt_features(model);
  const VisualFeatures v = extract_visual(model, image, feats);
  const Tensor logits = disease_classify(v.global, v.regions, model.generator);
  std::vector<double> p;
  for (double z : logits.data()) p.push_back(1.0 / (1.0 + std::exp(-z)));
  return p;
}

RadCliqWeights fit_weights_from_pairs(const ModelState& model, const std::vector<FitPair>& pairs) {
  TextEmbedder embedder(model.encoder, model.vocab);
  std::vector<FitObservation> obs;
  for (const auto& p : pairs)
    obs.push_back({component_vector(p.candidate, p.reference, embedder), static_cast<double>(p.count)});
  return fit_radcliq_weights(obs);
}

MetricReport evaluate_split(const ModelState& model, const Dataset& data, const RadCliqWeights& weights) {
  std::vector<std::string> refs;
  for (const auto& e : data.entries) refs.push_back(e.report);
  TextEmbedder embedder(model.encoder, model.vocab);
  return evaluate_reports(generate_reports(model, data), refs, embedder, weights);
}

}  // namespace rrg
