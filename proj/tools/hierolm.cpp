// hierolm command-line front end. Every flag can also be set through the
// environment as HIEROLM_<FLAG>, e.g. HIEROLM_MAX_EPOCHS=20.

#include <cctype>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "hierolm/checkpoint.hpp"
#include "hierolm/config.hpp"
#include "hierolm/corpus.hpp"
#include "hierolm/error.hpp"
#include "hierolm/evaluation.hpp"
#include "hierolm/inference.hpp"
#include "hierolm/repl.hpp"
#include "hierolm/service.hpp"
#include "hierolm/synthetic.hpp"
#include "hierolm/training.hpp"

using namespace hierolm;

namespace {

std::string env_name(const std::string& flag) {
  std::string out = "HIEROLM_";
  for (char ch : flag) out += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

template <typename V>
CLI::Option* flag(CLI::App* app, const std::string& name, V& value, const std::string& help,
                  const std::string& short_name = "") {
  const std::string spec = (short_name.empty() ? "" : "-" + short_name + ",") + "--" + name;
  return app->add_option(spec, value, help)->envname(env_name(name));
}

struct TrainOverrides {
  std::map<std::string, std::string> values;

  void add(CLI::App* app) {
    for (const char* key : {"arch", "embed-size", "hidden-size", "dropout", "batch-size", "lr", "optimizer",
                            "max-epochs", "seed", "min-count", "split-seed", "context-order", "grad-clip-norm"}) {
      flag(app, key, values[key], std::string("training option ") + key);
    }
  }

  void apply(TrainConfig& config) const {
    for (const auto& [key, value] : values) {
      if (value.empty()) continue;
      std::string k = key == "arch" ? "architecture" : key == "lr" ? "initial_lr" : key;
      for (char& ch : k) ch = ch == '-' ? '_' : ch;
      config.set(k, value);
    }
    config.validate();
  }
};

TrainConfig load_config(const std::string& path, const TrainOverrides& overrides) {
  TrainConfig config;
  if (!path.empty()) config = train_config_from(ConfigFile::load(path));
  overrides.apply(config);
  return config;
}

std::vector<std::string> context_tokens(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  return tokenize_line(text);
}

std::vector<TokenId> encode_context(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<TokenId> ids{kBosId};
  for (const auto& t : tokens) {
    if (!vocab.find(t)) std::cerr << "warning: '" << t << "' is not in the vocabulary, using <unk>\n";
    ids.push_back(vocab.id(t));
  }
  return ids;
}

std::span<const EncodedSentence> pick_split(const DatasetSplit& data, const std::string& name,
                                            std::vector<EncodedSentence>& all) {
  if (name == "test") return data.test;
  if (name == "validation" || name == "val") return data.validation;
  if (name == "train") return data.train;
  if (name == "all") {
    all = data.train;
    all.insert(all.end(), data.validation.begin(), data.validation.end());
    all.insert(all.end(), data.test.begin(), data.test.end());
    return all;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown split '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-level language models for hieroglyph transliteration corpora"};
  app.require_subcommand(1);

  // train
  std::string corpus_path, config_path, out_path, metrics_path, vocab_out;
  TrainOverrides train_overrides;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  flag(train_cmd, "corpus", corpus_path, "corpus file, one sentence per line")->required();
  flag(train_cmd, "config", config_path, "key = value training config");
  flag(train_cmd, "out", out_path, "checkpoint to write")->required();
  flag(train_cmd, "metrics", metrics_path, "per-epoch JSON lines (default stderr)");
  flag(train_cmd, "vocab-out", vocab_out, "also write the vocabulary, one token per line");
  train_overrides.add(train_cmd);

  // eval
  std::string ckpt_path, split_name = "test", pca_path, tokens_subset;
  bool json_out = false, no_eos = false;
  std::size_t shots = 4;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  flag(eval_cmd, "ckpt", ckpt_path, "checkpoint")->required();
  flag(eval_cmd, "corpus", corpus_path, "corpus file; split with the checkpoint's config")->required();
  flag(eval_cmd, "split", split_name, "test, validation, train or all");
  flag(eval_cmd, "shots", shots, "multi-shot depth K");
  flag(eval_cmd, "pca-csv", pca_path, "write 2-D PCA coordinates of the embeddings");
  flag(eval_cmd, "pca-tokens", tokens_subset, "space-separated tokens to project (default all)");
  eval_cmd->add_flag("--json", json_out, "emit JSON")->envname("HIEROLM_JSON");
  eval_cmd->add_flag("--no-eos", no_eos, "do not count EOS predictions")->envname("HIEROLM_NO_EOS");

  // predict / complete
  std::string context;
  std::size_t k = 5, steps = 4;
  auto* predict_cmd = app.add_subcommand("predict", "top-k next tokens after a context");
  flag(predict_cmd, "ckpt", ckpt_path, "checkpoint")->required();
  flag(predict_cmd, "context", context, "space-separated context tokens");
  flag(predict_cmd, "k", k, "number of candidates", "k");
  predict_cmd->add_flag("--json", json_out, "emit JSON")->envname("HIEROLM_JSON");

  auto* complete_cmd = app.add_subcommand("complete", "greedy multi-token completion");
  flag(complete_cmd, "ckpt", ckpt_path, "checkpoint")->required();
  flag(complete_cmd, "context", context, "space-separated context tokens");
  flag(complete_cmd, "steps", steps, "tokens to generate");
  complete_cmd->add_flag("--json", json_out, "emit JSON")->envname("HIEROLM_JSON");

  // sweep
  std::string grid_path;
  auto* sweep_cmd = app.add_subcommand("sweep", "train and test one model per grid point");
  flag(sweep_cmd, "grid", grid_path, "config with a [grid] section")->required();
  flag(sweep_cmd, "corpus", corpus_path, "corpus file")->required();
  flag(sweep_cmd, "out", out_path, "write the table here instead of stdout");
  sweep_cmd->add_flag("--json", json_out, "emit JSON instead of TSV")->envname("HIEROLM_JSON");
  TrainOverrides sweep_overrides;
  sweep_overrides.add(sweep_cmd);

  // serve
  std::string addr = "127.0.0.1:8080", ui_root;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  flag(serve_cmd, "ckpt", ckpt_path, "checkpoint")->required();
  flag(serve_cmd, "addr", addr, "HOST:PORT to listen on");
  flag(serve_cmd, "ui", ui_root, "directory of static files served under /ui");

  // repl
  auto* repl_cmd = app.add_subcommand("repl", "interactive completion session");
  flag(repl_cmd, "ckpt", ckpt_path, "checkpoint")->required();

  // synth
  std::string spec_path;
  std::size_t count = 5000;
  std::uint64_t seed = 7;
  bool oracle = false;
  auto* synth_cmd = app.add_subcommand("synth", "sample a corpus from a template grammar");
  flag(synth_cmd, "spec", spec_path, "grammar file")->required();
  flag(synth_cmd, "count", count, "sentences to sample", "n");
  flag(synth_cmd, "seed", seed, "sampling seed");
  flag(synth_cmd, "out", out_path, "write here instead of stdout");
  synth_cmd->add_flag("--oracle", oracle, "print exact entropy and multi-shot optimum to stderr")
      ->envname("HIEROLM_ORACLE");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const TrainConfig config = load_config(config_path, train_overrides);
      const CorpusFile corpus = load_corpus(corpus_path);
      if (corpus.blank_lines) std::cerr << "skipped " << corpus.blank_lines << " blank lines\n";
      const PreparedCorpus prepared = prepare_corpus(corpus.sentences, config);
      std::cerr << format_stats(compute_stats(corpus.sentences, &prepared.split))
                << "training vocabulary " << prepared.vocab.size() << " (specials included)\n";
      std::ofstream metrics_file;
      if (!metrics_path.empty()) metrics_file.open(metrics_path);
      TrainHooks hooks;
      hooks.metrics = metrics_path.empty() ? &std::cerr : &metrics_file;
      const TrainResult result = train(config, prepared.data, prepared.vocab.size(), hooks);
      save_checkpoint(out_path, make_checkpoint(*result.model, prepared.vocab, config.to_json()));
      if (!vocab_out.empty()) write_file(vocab_out, prepared.vocab.to_text());
      std::cerr << "best validation perplexity " << result.state.best_val_perplexity << " at epoch "
                << result.state.best_epoch << ", " << result.state.decay_count << " decays\n";
      if (!prepared.data.test.empty()) {
        const EvalReport test = evaluate(*result.model, std::span<const EncodedSentence>(prepared.data.test));
        std::cout << test.to_json().dump(2) << "\n";
      }
      return 0;
    }

    if (*synth_cmd) {
      const Grammar grammar = Grammar::parse(read_file(spec_path));
      const SyntheticCorpus synth = generate_synthetic_corpus(grammar, count, seed);
      std::string text;
      for (const auto& s : synth.sentences) text += join_tokens(s) + "\n";
      if (out_path.empty()) std::cout << text;
      else write_file(out_path, text);
      if (oracle) {
        const auto& dist = synth.distribution;
        const MultiShotOracle best = multishot_oracle(dist, 4);
        nlohmann::json j = {{"outcomes", dist.outcomes().size()},
                            {"entropy_per_sentence", dist.entropy()},
                            {"expected_predictions", dist.expected_predictions()},
                            {"entropy_per_prediction", dist.per_token_entropy()},
                            {"perplexity", std::exp(dist.per_token_entropy())},
                            {"bayes_multishot", best.bayes_accuracy},
                            {"greedy_multishot", best.greedy_accuracy}};
        std::cerr << j.dump(2) << "\n";
      }
      return 0;
    }

    if (*sweep_cmd) {
      const ConfigFile file = ConfigFile::load(grid_path);
      TrainConfig base = train_config_from(file);
      sweep_overrides.apply(base);
      const CorpusFile corpus = load_corpus(corpus_path);
      const PreparedCorpus prepared = prepare_corpus(corpus.sentences, base);
      const auto rows = sweep(base, sweep_grid_from(file), prepared.data, prepared.vocab.size(), &std::cerr);
      const std::string table = json_out ? sweep_json(rows).dump(2) + "\n" : sweep_tsv(rows);
      if (out_path.empty()) std::cout << table;
      else write_file(out_path, table);
      return 0;
    }

    if (*serve_cmd) {
      auto [host, port] = parse_address(addr);
      HttpServer server(ServerOptions{host, port, ui_root});
      const int bound = server.bind();
      std::cerr << "listening on " << host << ":" << bound << "\n";
      std::thread loader([&] {
        try {
          server.set_service(std::make_unique<InferenceService>(load_checkpoint(ckpt_path), ckpt_path));
          std::cerr << "checkpoint loaded\n";
        } catch (const std::exception& e) {
          std::cerr << "error: " << e.what() << "\n";
          server.stop();
        }
      });
      server.listen();
      loader.join();
      return server.ready() ? 0 : 1;
    }

    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto model = model_from_checkpoint(ckpt);

    if (*eval_cmd) {
      const TrainConfig config = TrainConfig::from_json(ckpt.config);
      const CorpusFile corpus = load_corpus(corpus_path);
      PreparedCorpus prepared = prepare_corpus(corpus.sentences, config);
      // Re-encode with the checkpoint's vocabulary in case the corpus changed.
      prepared.data = encode_split(corpus.sentences, prepared.split, ckpt.vocab);
      std::vector<EncodedSentence> all;
      const auto split = pick_split(prepared.data, split_name, all);
      const EvalOptions options{config.eval_batch_size, !no_eos};
      FullReport report{evaluate(*model, split, options), multishot(*model, split, shots),
                        length_buckets(*model, split, options)};
      std::cout << (json_out ? report.to_json().dump(2) + "\n" : report.to_text());
      if (!pca_path.empty()) {
        std::vector<TokenId> ids;
        for (const auto& t : context_tokens(tokens_subset)) ids.push_back(ckpt.vocab.id(t));
        const auto proj = pca_project(model->embedding(), std::span<const TokenId>(ids));
        write_file(pca_path, proj.to_csv(ckpt.vocab));
        std::cerr << "explained variance " << proj.explained_variance_ratio[0] << ", "
                  << proj.explained_variance_ratio[1] << "\n";
      }
      return 0;
    }

    if (*predict_cmd) {
      const auto ids = encode_context(context_tokens(context), ckpt.vocab);
      const auto candidates = predict_topk(*model, std::span<const TokenId>(ids), k);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& c : candidates) {
        if (json_out) j.push_back({{"token", ckpt.vocab.token(c.id)}, {"id", c.id}, {"probability", c.probability}});
        else std::cout << ckpt.vocab.token(c.id) << '\t' << c.probability << '\n';
      }
      if (json_out) std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (*complete_cmd) {
      const auto ids = encode_context(context_tokens(context), ckpt.vocab);
      const auto generated = greedy_complete(*model, std::span<const TokenId>(ids), steps);
      std::vector<std::string> tokens;
      for (TokenId id : generated) tokens.push_back(ckpt.vocab.token(id));
      if (json_out) {
        std::cout << nlohmann::json{{"generated", tokens},
                                    {"terminated_by_eos", !generated.empty() && generated.back() == kEosId}}
                         .dump(2)
                  << "\n";
      } else {
        std::cout << join_tokens(tokens) << "\n";
      }
      return 0;
    }

    if (*repl_cmd) {
      Repl repl(*model, ckpt.vocab);
      std::cout << "loaded " << architecture_name(ckpt.architecture) << " model, vocabulary " << ckpt.vocab.size()
                << ". Type help for commands.\n";
      repl.run(std::cin, std::cout);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
