#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pabr/evaluation.hpp"
#include "pabr/io.hpp"
#include "pabr/matching.hpp"
#include "pabr/pipeline.hpp"
#include "pabr/synthgen.hpp"

namespace {

using namespace pabr;

std::string parent_dir(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

PoolingMode mode_from_string(const std::string& s) {
  if (s == "exact") return PoolingMode::exact;
  if (s == "sketched") return PoolingMode::sketched;
  if (s == "global-average") return PoolingMode::global_average;
  throw ConfigError("unknown pooling mode '" + s + "'");
}

// Shared by `pool` and `sketch`: manifest in, embedding store out.
void embed_manifest(const std::string& manifest_path,
                    const std::string& heads_path, const std::string& out_path,
                    PoolingMode mode, int sketch_dim,
                    std::uint64_t sketch_seed) {
  const auto manifest = io::read_manifest(manifest_path);
  if (manifest.entries.empty())
    throw EmptyInputError(manifest_path + " lists no samples");
  const auto samples = load_samples(manifest.entries, parent_dir(manifest_path));

  LinearHeads<double> heads;
  EmbedOptions opt;
  opt.mode = mode;
  if (!heads_path.empty()) {
    heads = io::read_heads<double>(heads_path);
    opt.heads = &heads;
  }
  SketchParams sketch;
  if (mode == PoolingMode::sketched) {
    // Channel counts the sketch hashes must cover come from the first
    // sample as it enters pooling (after the heads, if any).
    int c_a = samples[0].appearance_map.c;
    int c_p = samples[0].part_map.c;
    if (opt.heads != nullptr) {
      c_a = static_cast<int>(heads.w_a.rows());
      c_p = static_cast<int>(heads.w_p.rows());
    }
    sketch = SketchParams::generate(c_a, c_p, sketch_dim, sketch_seed);
    opt.sketch = &sketch;
  }

  std::vector<std::pair<std::string, Embedding<double>>> items;
  items.reserve(samples.size());
  for (const auto& s : samples)
    items.emplace_back(s.sample_id, embed_sample(s, opt));
  io::write_embeddings(items, out_path);
  std::cout << "wrote " << items.size() << " embeddings to " << out_path
            << "\n";
}

struct LabelInfo {
  int identity = 0;
  int camera = 0;
};

std::map<std::string, LabelInfo> label_table(const DatasetManifest& manifest) {
  std::map<std::string, LabelInfo> table;
  for (const auto& e : manifest.entries)
    table[e.sample_id] = {e.identity, e.camera};
  return table;
}

// Joins an embedding store against manifest labels for one split.
std::vector<LabeledEmbedding<double>> labeled_split(
    const std::vector<std::pair<std::string, Embedding<double>>>& store,
    const DatasetManifest& manifest, Split split) {
  std::vector<LabeledEmbedding<double>> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    const auto it = std::find_if(store.begin(), store.end(),
                                 [&](const auto& item) {
                                   return item.first == e.sample_id;
                                 });
    if (it == store.end())
      throw ValidationError("no embedding for sample '" + e.sample_id + "'");
    out.push_back({e.sample_id, e.identity, e.camera, it->second});
  }
  return out;
}

void run_match(const std::string& embeddings_path,
               const std::string& manifest_path, const std::string& out_path) {
  const auto store = io::read_embeddings<double>(embeddings_path);
  const auto manifest = io::read_manifest(manifest_path);
  const auto queries = labeled_split(store, manifest, Split::query);
  const auto gallery_labeled = labeled_split(store, manifest, Split::gallery);
  if (queries.empty()) throw EmptyInputError("manifest lists no query samples");
  if (gallery_labeled.empty())
    throw EmptyInputError("manifest lists no gallery samples");

  std::vector<std::pair<std::string, Embedding<double>>> gallery;
  gallery.reserve(gallery_labeled.size());
  for (const auto& g : gallery_labeled)
    gallery.emplace_back(g.sample_id, g.embedding);

  std::vector<io::RankingLine> lines;
  lines.reserve(queries.size());
  for (const auto& q : queries) {
    RankedResult ranked = rank_gallery(q.embedding, gallery, q.sample_id);
    io::RankingLine line;
    line.query_id = q.sample_id;
    for (std::size_t i = 0; i < ranked.ordering.size(); ++i)
      line.entries.emplace_back(ranked.ordering[i], ranked.similarities[i]);
    lines.push_back(std::move(line));
  }
  io::write_rankings(lines, out_path);
  std::cout << "ranked " << gallery.size() << " gallery images for "
            << lines.size() << " queries into " << out_path << "\n";
}

// CMC/mAP straight from a rankings file: the stored order is trusted, the
// same-identity same-camera entries are dropped the way evaluate() drops
// them before ranking.
EvalReport evaluate_rankings(const std::vector<io::RankingLine>& rankings,
                             const DatasetManifest& manifest) {
  if (rankings.empty()) throw EmptyInputError("rankings file is empty");
  const auto labels = label_table(manifest);
  auto label_of = [&](const std::string& id) {
    const auto it = labels.find(id);
    if (it == labels.end())
      throw ValidationError("rankings mention sample '" + id +
                            "' missing from the manifest");
    return it->second;
  };

  EvalReport report;
  report.ranks = {1, 5, 10, 20};
  std::vector<double> hits(report.ranks.size(), 0.0);
  for (const auto& line : rankings) {
    const LabelInfo q = label_of(line.query_id);
    int pos = 0, num_gt = 0, first_hit = -1;
    double ap = 0.0;
    for (const auto& [id, sim] : line.entries) {
      (void)sim;
      const LabelInfo g = label_of(id);
      if (q.identity >= 0 && g.identity == q.identity && g.camera == q.camera)
        continue;  // same view of the same person, excluded
      if (q.identity >= 0 && g.identity == q.identity) {
        ++num_gt;
        ap += static_cast<double>(num_gt) / static_cast<double>(pos + 1);
        if (first_hit < 0) first_hit = pos;
      }
      ++pos;
    }
    if (num_gt == 0) {
      ++report.num_dropped_queries;
      continue;
    }
    ++report.num_valid_queries;
    report.per_query_ap.push_back(ap / num_gt);
    for (std::size_t r = 0; r < report.ranks.size(); ++r)
      if (first_hit >= 0 && first_hit < report.ranks[r]) hits[r] += 1.0;
  }
  if (report.num_valid_queries == 0)
    throw EmptyInputError("every ranked query lacked a ground-truth match");
  report.cmc.resize(report.ranks.size());
  for (std::size_t r = 0; r < report.ranks.size(); ++r)
    report.cmc[r] = hits[r] / report.num_valid_queries;
  for (double ap : report.per_query_ap) report.map += ap;
  report.map /= report.num_valid_queries;
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"part-aligned bilinear pooling for re-identification"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth::SynthConfig synth_cfg;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--ids", synth_cfg.num_identities, "identities");
  synth_cmd->add_option("--imgs", synth_cfg.images_per_identity,
                        "images per identity");
  synth_cmd->add_option("--height", synth_cfg.h, "grid height");
  synth_cmd->add_option("--width", synth_cfg.w, "grid width");
  synth_cmd->add_option("--parts", synth_cfg.num_parts, "body parts");
  synth_cmd->add_option("--channels", synth_cfg.appearance_channels,
                        "raw appearance channels");
  synth_cmd->add_option("--jitter", synth_cfg.jitter,
                        "max vertical part translation in cells");
  synth_cmd->add_option("--sigma", synth_cfg.sigma, "feature noise level");
  synth_cmd->add_option("--distractors", synth_cfg.distractor_fraction,
                        "distractor fraction of the labeled image count");
  synth_cmd->add_option("--cameras", synth_cfg.cameras, "camera count");
  synth_cmd->add_option("--seed", synth_cfg.seed, "generation seed");
  synth_cmd->callback([&] {
    auto manifest = synth::generate(synth_cfg, synth_out);
    std::cout << "generated " << manifest.entries.size() << " samples in "
              << synth_out << "\n";
  });

  // pool
  auto* pool_cmd =
      app.add_subcommand("pool", "exact bilinear embeddings for a manifest");
  std::string pool_manifest, pool_heads, pool_out, pool_mode = "exact";
  pool_cmd->add_option("--manifest", pool_manifest, "dataset manifest")
      ->required();
  pool_cmd->add_option("--out", pool_out, "embedding store to write")
      ->required();
  pool_cmd->add_option("--heads", pool_heads,
                       "trained heads file (raw maps are used as-is without)");
  pool_cmd->add_option("--mode", pool_mode, "exact or global-average")
      ->check(CLI::IsMember({"exact", "global-average"}));
  pool_cmd->callback([&] {
    embed_manifest(pool_manifest, pool_heads, pool_out,
                   mode_from_string(pool_mode), 0, 0);
  });

  // sketch
  auto* sketch_cmd =
      app.add_subcommand("sketch", "compact sketched embeddings");
  std::string sketch_manifest, sketch_heads, sketch_out;
  int sketch_dim = 0;
  std::uint64_t sketch_seed = 0;
  sketch_cmd->add_option("--manifest", sketch_manifest, "dataset manifest")
      ->required();
  sketch_cmd->add_option("--out", sketch_out, "embedding store to write")
      ->required();
  sketch_cmd->add_option("--dim", sketch_dim, "sketch dimension")
      ->required()
      ->check(CLI::PositiveNumber);
  sketch_cmd->add_option("--seed", sketch_seed, "hash seed");
  sketch_cmd->add_option("--heads", sketch_heads, "trained heads file");
  sketch_cmd->callback([&] {
    embed_manifest(sketch_manifest, sketch_heads, sketch_out,
                   PoolingMode::sketched, sketch_dim, sketch_seed);
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "fit linear heads");
  std::string train_manifest, train_config, train_out, train_history;
  std::string train_mode = "exact";
  int train_iters = -1, train_ca = 0, train_cp = 0;
  std::uint64_t train_seed = 0;
  bool train_nonneg = false;
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest")
      ->required();
  train_cmd->add_option("--out", train_out, "heads file to write")->required();
  train_cmd->add_option("--config", train_config,
                        "key=value hyperparameter file");
  train_cmd->add_option("--history", train_history, "loss history file");
  train_cmd->add_option("--iters", train_iters,
                        "iterations (default: schedule total)");
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--mode", train_mode, "pooling during training")
      ->check(CLI::IsMember({"exact", "sketched", "global-average"}));
  train_cmd->add_option("--ca", train_ca, "appearance head output channels");
  train_cmd->add_option("--cp", train_cp, "part head output channels");
  train_cmd->add_flag("--nonneg-parts", train_nonneg,
                      "clamp part descriptors at zero");
  train_cmd->callback([&] {
    TrainConfig cfg;
    if (!train_config.empty()) cfg = io::read_train_config(train_config);
    cfg.mode = mode_from_string(train_mode);
    cfg.nonneg_parts = train_nonneg;
    if (train_ca > 0) cfg.c_a = train_ca;
    if (train_cp > 0) cfg.c_p = train_cp;
    const int iters =
        train_iters >= 0 ? train_iters : cfg.optimizer.total_iters;

    const auto manifest = io::read_manifest(train_manifest);
    const auto samples = load_samples(manifest.with_split(Split::train),
                                      parent_dir(train_manifest));
    auto result = train(samples, cfg, iters, train_seed);
    io::write_heads(result.heads, train_out);
    if (!train_history.empty()) io::write_history(result.history, train_history);
    std::cout << "trained " << iters << " iterations";
    if (!result.history.empty())
      std::cout << ", final loss " << result.history.back().loss;
    std::cout << ", heads in " << train_out << "\n";
  });

  // match
  auto* match_cmd =
      app.add_subcommand("match", "rank the gallery for every query");
  std::string match_embeddings, match_manifest, match_out;
  match_cmd->add_option("--embeddings", match_embeddings, "embedding store")
      ->required();
  match_cmd->add_option("--manifest", match_manifest, "dataset manifest")
      ->required();
  match_cmd->add_option("--out", match_out, "rankings file to write")
      ->required();
  match_cmd->callback(
      [&] { run_match(match_embeddings, match_manifest, match_out); });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "CMC and mAP report");
  std::string eval_embeddings, eval_rankings, eval_manifest, eval_out;
  int eval_trials = 0;
  std::uint64_t eval_seed = 0;
  auto* eval_src = eval_cmd->add_option_group("source");
  eval_src->require_option(1);
  eval_src->add_option("--embeddings", eval_embeddings, "embedding store");
  auto* eval_rank_opt =
      eval_src->add_option("--rankings", eval_rankings, "rankings file");
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")
      ->required();
  eval_cmd->add_option("--out", eval_out, "report file to write");
  eval_cmd
      ->add_option("--trials", eval_trials,
                   "single-gallery-shot trials (embeddings input only)")
      ->excludes(eval_rank_opt);
  eval_cmd->add_option("--seed", eval_seed, "trial sampling seed");
  eval_cmd->callback([&] {
    const auto manifest = io::read_manifest(eval_manifest);
    EvalReport report;
    if (!eval_rankings.empty()) {
      report = evaluate_rankings(io::read_rankings(eval_rankings), manifest);
    } else {
      const auto store = io::read_embeddings<double>(eval_embeddings);
      auto queries = labeled_split(store, manifest, Split::query);
      auto gallery = labeled_split(store, manifest, Split::gallery);
      if (eval_trials > 0) {
        auto pool = queries;
        pool.insert(pool.end(), gallery.begin(), gallery.end());
        report = evaluate_multi_trial(pool, eval_trials, eval_seed);
      } else {
        report = evaluate(queries, gallery);
      }
    }
    const std::string text = io::format_report(report);
    std::cout << text;
    if (!eval_out.empty()) io::write_report(report, eval_out);
  });

  // viz
  auto* viz_cmd =
      app.add_subcommand("viz", "project descriptor maps to RGB pixmaps");
  std::string viz_dir;
  std::vector<std::string> viz_inputs;
  viz_cmd->add_option("--out-dir", viz_dir, "directory for the images")
      ->required();
  viz_cmd->add_option("maps", viz_inputs, "feature map files")->required();
  viz_cmd->callback([&] {
    std::vector<FeatureMap<double>> maps;
    std::vector<std::string> outs;
    std::filesystem::create_directories(viz_dir);
    for (const auto& in : viz_inputs) {
      maps.push_back(io::read_feature_file<double>(in));
      outs.push_back((std::filesystem::path(viz_dir) /
                      (std::filesystem::path(in).stem().string() + ".ppm"))
                         .string());
    }
    io::viz_export(maps, outs);
    std::cout << "wrote " << outs.size() << " images to " << viz_dir << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
