// Command-line front end for the trustsum toolkit: corpus generation,
// training, annotated generation, evaluation, sweeps, and gradient checking.
// Diagnostics go to stderr; data goes to the requested files or stdout.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trustsum/annotate.hpp"
#include "trustsum/corpus.hpp"
#include "trustsum/experiments.hpp"
#include "trustsum/lexicon.hpp"
#include "trustsum/metrics.hpp"
#include "trustsum/model.hpp"
#include "trustsum/training.hpp"

namespace {

using namespace trustsum;

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_stream(std::istream& in) {
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return read_stream(in);
}

RiskLexicon lexicon_or_default(const std::string& path) {
    return path.empty() ? default_lexicon() : load_lexicon(path);
}

// Prefill flags of the chosen subcommand from a --config JSON object
// (scalar values keyed by long option name). Explicit command-line flags win:
// keys already present in argv are skipped.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;

    nlohmann::json root;
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config: " + config_path);
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed config JSON in " + config_path + ": " + e.what());
    }
    if (!root.is_object()) throw std::runtime_error("config must be a JSON object: " + config_path);

    std::vector<std::string> merged = args;
    for (const auto& [key, value] : root.items()) {
        const std::string flag = "--" + key;
        bool present = false;
        for (const auto& arg : args)
            if (arg == flag || arg.rfind(flag + "=", 0) == 0) {
                present = true;
                break;
            }
        if (present) continue;
        merged.push_back(flag);
        merged.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    return merged;
}

std::vector<Pair> reencoded_pairs(const Corpus& corpus, const Vocab& vocab) {
    std::vector<Pair> pairs = corpus.pairs;
    for (Pair& pair : pairs) {
        pair.document = encode(decode_text(pair.document, corpus.vocab), vocab);
        pair.summary = encode(decode_text(pair.summary, corpus.vocab), vocab);
    }
    return pairs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trustsum: uncertainty- and risk-aware toy summarization toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t global_seed = 0;
    bool seed_given = false;
    std::string config_path;
    app.add_option("--seed", global_seed,
                   "Override the subcommand's primary seed (corpus / training / decode / fixture)")
        ->each([&seed_given](const std::string&) { seed_given = true; });
    app.add_option("--config", config_path,
                   "JSON object prefilling this subcommand's flags (explicit flags win)");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic incident-report corpus");
    int gen_n = 64;
    std::uint64_t gen_seed = 7;
    std::string gen_lexicon, gen_out, gen_out_vocab;
    gen->add_option("--n", gen_n, "Number of document/summary pairs")->capture_default_str();
    gen->add_option("--lexicon", gen_lexicon, "Risk lexicon JSON (default: built-in)");
    gen->add_option("--out", gen_out, "Output corpus JSONL path")->required();
    gen->add_option("--out-vocab", gen_out_vocab, "Optional vocab file (one token per line)");

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a JSONL corpus");
    std::string tr_corpus, tr_model_cfg, tr_train_cfg, tr_ckpt, tr_history, tr_lexicon;
    tr->add_option("--corpus", tr_corpus, "Corpus JSONL path")->required();
    tr->add_option("--model-config", tr_model_cfg, "Model config JSON (default: built-in defaults)");
    tr->add_option("--train-config", tr_train_cfg, "Train config JSON (default: built-in defaults)");
    tr->add_option("--out-checkpoint", tr_ckpt, "Checkpoint output path")->required();
    tr->add_option("--history-csv", tr_history, "Per-epoch loss/metric CSV output path");
    tr->add_option("--lexicon", tr_lexicon, "Risk lexicon JSON for the risk term (default: built-in)");

    // generate
    auto* ge = app.add_subcommand("generate", "Decode one document into an annotated summary");
    std::string ge_ckpt, ge_input, ge_lexicon, ge_json_out;
    bool ge_stdin = false;
    int ge_k = 1, ge_s_mc = 1, ge_max_len = 16;
    ge->add_option("--checkpoint", ge_ckpt, "Checkpoint path")->required();
    ge->add_option("--input-file", ge_input, "Plain-text document (whitespace tokenized)");
    ge->add_flag("--stdin", ge_stdin, "Read the document from standard input");
    ge->add_option("--lexicon", ge_lexicon, "Risk lexicon JSON (default: built-in)");
    ge->add_option("--k", ge_k, "Sampling width; 1 = greedy")->capture_default_str();
    ge->add_option("--s-mc", ge_s_mc, "Posterior draws per annotated token")->capture_default_str();
    ge->add_option("--max-len", ge_max_len, "Maximum summary tokens")->capture_default_str();
    ge->add_option("--json-out", ge_json_out, "Annotated-summary JSON path (default: stdout)");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Greedy-decode a corpus and score against gold");
    std::string ev_ckpt, ev_corpus, ev_report, ev_per_pair;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--corpus", ev_corpus, "Corpus JSONL path")->required();
    ev->add_option("--report-csv", ev_report, "Aggregate metric CSV path (default: stdout)");
    ev->add_option("--per-pair-csv", ev_per_pair, "Optional per-pair metric CSV path");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run a seeded sensitivity sweep");
    sw->require_subcommand(1);
    std::string sw_spec, sw_csv, sw_svg;
    int sw_jobs = 1;
    std::vector<CLI::App*> sweep_cmds;
    for (const char* kind : {"lr", "topk", "noise"}) {
        auto* cmd = sw->add_subcommand(kind);
        cmd->add_option("--spec", sw_spec, "Sweep spec JSON (default: built-in recipe)");
        cmd->add_option("--csv", sw_csv, "Result CSV path")->required();
        cmd->add_option("--svg", sw_svg, "Optional plot SVG path");
        cmd->add_option("--jobs", sw_jobs, "Parallel sweep jobs")->capture_default_str();
        sweep_cmds.push_back(cmd);
    }

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradient");
    std::string gc_model_cfg;
    double gc_tolerance = 1e-4;
    std::uint64_t gc_seed = 17;
    gc->add_option("--model-config", gc_model_cfg, "Model config JSON (default: built-in tiny config)");
    gc->add_option("--tolerance", gc_tolerance, "Maximum allowed relative error")->capture_default_str();

    std::vector<std::string> raw_args(argv + 1, argv + argc);
    try {
        const std::vector<std::string> merged = merge_config_args(raw_args);
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (const auto& arg : merged) cargs.push_back(arg.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help / --version
            return app.exit(e);
        }
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) {
            if (seed_given) gen_seed = global_seed;
            const RiskLexicon lexicon = lexicon_or_default(gen_lexicon);
            const Corpus corpus = generate_synthetic_corpus(gen_seed, gen_n, lexicon);
            save_jsonl(corpus, gen_out);
            if (!gen_out_vocab.empty()) save_vocab_file(corpus.vocab, gen_out_vocab);
            std::cerr << "wrote " << corpus.pairs.size() << " pairs (vocab " << corpus.vocab.size()
                      << ") to " << gen_out << "\n";
        } else if (*tr) {
            const Corpus corpus = load_jsonl(tr_corpus);
            ModelConfig model_config =
                tr_model_cfg.empty() ? ModelConfig{} : load_model_config(tr_model_cfg);
            if (model_config.vocab_size == 0) model_config.vocab_size = corpus.vocab.size();
            TrainConfig train_config =
                tr_train_cfg.empty() ? TrainConfig{} : load_train_config(tr_train_cfg);
            if (seed_given) train_config.seed = global_seed;
            const RiskLexicon lexicon = lexicon_or_default(tr_lexicon);
            const TrainResult result = train(corpus, model_config, train_config, lexicon);
            save_checkpoint({model_config, corpus.vocab, result.params}, tr_ckpt);
            if (!tr_history.empty()) write_text_file(tr_history, history_csv(result.history));
            const EpochStats& last = result.history.epochs.back();
            std::fprintf(stderr,
                         "trained %d epochs in %.1fs: nll %.4f (%.4f per token), bleu %.1f\n",
                         train_config.epochs, result.history.wall_seconds, last.loss.nll,
                         last.per_token_nll, 100.0 * last.bleu);
        } else if (*ge) {
            if (ge_input.empty() == !ge_stdin) {
                std::cerr << "usage error: exactly one of --input-file or --stdin is required\n";
                return 1;
            }
            const Checkpoint ckpt = load_checkpoint(ge_ckpt);
            const RiskLexicon lexicon = lexicon_or_default(ge_lexicon);
            const std::string text = ge_stdin ? read_stream(std::cin) : read_text_file(ge_input);
            const std::vector<int> document = encode(text, ckpt.vocab);
            if (document.empty()) throw std::runtime_error("input document has no tokens");
            DecodeConfig decode_config;
            decode_config.strategy = ge_k > 1 ? DecodeStrategy::kTopK : DecodeStrategy::kGreedy;
            decode_config.k = ge_k;
            decode_config.max_len = ge_max_len;
            decode_config.s_mc = ge_s_mc;
            if (seed_given) decode_config.seed = global_seed;
            const RiskAnnotatedSummary summary = generate_trustworthy_summary(
                ckpt.params, ckpt.config, document, ckpt.vocab, lexicon, decode_config);
            const std::string json = annotated_to_json(summary).dump(2) + "\n";
            if (ge_json_out.empty())
                std::cout << json;
            else
                write_text_file(ge_json_out, json);
        } else if (*ev) {
            const Checkpoint ckpt = load_checkpoint(ev_ckpt);
            const Corpus corpus = load_jsonl(ev_corpus);
            const std::vector<Pair> pairs = reencoded_pairs(corpus, ckpt.vocab);
            const std::vector<std::vector<int>> candidates =
                decode_corpus(ckpt.params, ckpt.config, pairs, DecodeConfig{}, kEvalDecodeCap);
            std::vector<std::pair<std::vector<int>, std::vector<int>>> scored;
            scored.reserve(pairs.size());
            for (std::size_t i = 0; i < pairs.size(); ++i)
                scored.emplace_back(candidates[i], pairs[i].summary);
            const MetricReport report = evaluate_corpus(scored);
            const std::string csv = report_csv(report);
            if (ev_report.empty())
                std::cout << csv;
            else
                write_text_file(ev_report, csv);
            if (!ev_per_pair.empty()) {
                std::string detail = "pair_id,bleu,rouge1_f,rouge1_recall,rouge2_f,rouge2_recall\n";
                for (std::size_t i = 0; i < pairs.size(); ++i) {
                    const auto& [candidate, reference] = scored[i];
                    const RougeScore r1 = rouge_n(candidate, reference, 1);
                    const RougeScore r2 = reference.size() >= 2 ? rouge_n(candidate, reference, 2)
                                                                : RougeScore{};
                    detail += pairs[i].id;
                    detail += "," + format_fixed(100.0 * bleu(candidate, reference));
                    detail += "," + format_fixed(100.0 * r1.f1);
                    detail += "," + format_fixed(100.0 * r1.recall);
                    detail += "," + format_fixed(100.0 * r2.f1);
                    detail += "," + format_fixed(100.0 * r2.recall);
                    detail += "\n";
                }
                write_text_file(ev_per_pair, detail);
            }
        } else if (*sw) {
            SweepKind cli_kind = SweepKind::kLr;
            for (std::size_t i = 0; i < sweep_cmds.size(); ++i)
                if (sweep_cmds[i]->parsed())
                    cli_kind = sweep_kind_from(sweep_cmds[i]->get_name());
            SweepSpec spec;
            if (!sw_spec.empty()) {
                std::ifstream in(sw_spec);
                if (!in) throw std::runtime_error("cannot open sweep spec: " + sw_spec);
                nlohmann::json root;
                try {
                    in >> root;
                } catch (const nlohmann::json::exception& e) {
                    throw std::runtime_error("malformed sweep spec JSON in " + sw_spec + ": " +
                                             e.what());
                }
                spec = sweep_spec_from_json(root);
                if (root.contains("kind") && spec.kind != cli_kind)
                    throw std::runtime_error("sweep spec kind does not match the subcommand");
            }
            spec.kind = cli_kind;
            if (seed_given) spec.corpus.seed = global_seed;
            const SweepResult result = run_sweep(spec, sw_jobs);
            write_text_file(sw_csv, sweep_csv(result));
            if (!sw_svg.empty()) render_plot(result, sw_svg);
            std::cerr << "sweep " << sweep_kind_name(result.kind) << ": " << result.rows.size()
                      << " rows -> " << sw_csv << "\n";
        } else if (*gc) {
            const ModelConfig config = gc_model_cfg.empty()
                                           ? grad_check_default_config()
                                           : load_model_config(gc_model_cfg, grad_check_default_config());
            if (seed_given) gc_seed = global_seed;
            bool ok = true;
            const double lambdas[2] = {0.0, 0.5};
            for (double lambda : lambdas) {
                const GradCheckReport report = grad_check(config, gc_tolerance, lambda, 0.0, gc_seed);
                std::printf("lambda=%g gamma=0 max_rel_error=%.3e over %zu params\n", lambda,
                            report.max_rel_error, report.n_params);
                for (const GradCheckFailure& f : report.failures)
                    std::fprintf(stderr,
                                 "  param %zu: analytic %.6e vs numeric %.6e (rel %.3e)\n",
                                 f.index, f.analytic, f.numeric, f.rel_error);
                ok = ok && report.passed();
            }
            const GradCheckReport risk_report = grad_check(config, gc_tolerance, 0.0, 0.5, gc_seed);
            std::printf("lambda=0 gamma=0.5 max_rel_error=%.3e over %zu params\n",
                        risk_report.max_rel_error, risk_report.n_params);
            for (const GradCheckFailure& f : risk_report.failures)
                std::fprintf(stderr, "  param %zu: analytic %.6e vs numeric %.6e (rel %.3e)\n",
                             f.index, f.analytic, f.numeric, f.rel_error);
            ok = ok && risk_report.passed();
            if (!ok) throw std::runtime_error("gradient check exceeded tolerance");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
