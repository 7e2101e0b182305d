// Command-line front end: score, train-ood, eval, synth, serve.
//
// Exit codes: 0 success, 1 input/config error, 2 infrastructure error
// (unreachable backend, protocol violation, bind failure), 3 empty result.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "continuity/config.hpp"
#include "continuity/continuity.hpp"
#include "continuity/service.hpp"

namespace {

using namespace continuity;

constexpr int kExitInput = 1;
constexpr int kExitInfra = 2;
constexpr int kExitEmpty = 3;

struct Overrides {
    std::string config_path;
    std::optional<double> epsilon, eta, threshold;
    std::optional<int> residual_sign;
    std::optional<std::size_t> window, stride;
    std::optional<std::string> backend, encoder, topic_ood, background_ood;
    std::optional<std::size_t> token_budget;
    bool no_token_budget = false;
    std::vector<std::size_t> bucket_edges;
    std::optional<std::uint64_t> seed;

    void add_to(CLI::App& app) {
        app.add_option("-c,--config", config_path, "JSON config file");
        app.add_option("--epsilon", epsilon, "probability clamp");
        app.add_option("--eta", eta, "maximum residual strength");
        app.add_option("--residual-sign", residual_sign, "+1 topic affinity, -1 literal")
            ->check(CLI::IsMember({-1, 1}));
        app.add_option("--threshold", threshold, "on-topic decision threshold");
        app.add_option("--window", window, "sentences per chunk");
        app.add_option("--stride", stride, "sentences between chunk starts");
        app.add_option("--backend", backend, "stub | recorded:<path> | remote:<url>");
        app.add_option("--encoder", encoder, "stub | remote:<url>");
        app.add_option("--topic-ood", topic_ood, "topic OOD model file");
        app.add_option("--background-ood", background_ood, "background OOD model file");
        app.add_option("--token-budget", token_budget, "baseline token budget");
        app.add_flag("--no-token-budget", no_token_budget, "never truncate the baseline");
        app.add_option("--bucket-edges", bucket_edges, "token-gap bucket edges")->delimiter(',');
        app.add_option("--seed", seed, "seed recorded in reports");
    }

    Config resolve() const {
        Config c = config_path.empty() ? Config{} : load_config_file(config_path);
        apply_environment(c);
        if (epsilon) c.hp.epsilon = *epsilon;
        if (eta) c.hp.eta = *eta;
        if (threshold) c.hp.decision_threshold = *threshold;
        if (residual_sign) c.hp.residual_sign = *residual_sign > 0 ? ResidualSign::topic_affinity : ResidualSign::literal;
        if (window) c.hp.window = *window;
        if (stride) c.hp.stride = *stride;
        if (backend) c.backend = *backend;
        if (encoder) c.encoder = *encoder;
        if (topic_ood) {
            c.topic_ood = *topic_ood;
            c.topic_oods.clear();
        }
        if (background_ood) c.background_ood = *background_ood;
        if (token_budget) c.token_budget = *token_budget;
        if (no_token_budget) c.token_budget.reset();
        if (!bucket_edges.empty()) c.bucket_edges = bucket_edges;
        if (seed) c.seed = *seed;
        for (const std::string& w : c.hp.warnings()) std::cerr << "warning: " << w << '\n';
        return c;
    }
};

// One sentence per line, optionally "speaker<TAB>text".
std::vector<Sentence> read_conversation(std::istream& in) {
    std::vector<Sentence> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        Speaker speaker = Speaker::unknown;
        std::string_view text = line;
        if (const auto tab = line.find('\t'); tab != std::string::npos) {
            speaker = parse_speaker(std::string_view(line).substr(0, tab));
            text = std::string_view(line).substr(tab + 1);
        }
        if (trim(text).empty()) continue;
        out.push_back(make_sentence(out.size(), trim(text), speaker));
    }
    return out;
}

std::vector<Sentence> read_conversation_file(const std::string& path) {
    if (path.empty() || path == "-") return read_conversation(std::cin);
    std::ifstream in(path);
    if (!in) throw InputDomainError("cannot read " + path);
    return read_conversation(in);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputDomainError("cannot write " + path);
    out << content;
    if (!out) throw InputDomainError("failed writing " + path);
}

int cmd_score(const Overrides& o, const std::string& input, const std::string& topic, bool no_accept) {
    const Runtime runtime(o.resolve());
    const std::vector<Sentence> sentences = read_conversation_file(input);
    if (sentences.size() < 2)
        throw PreconditionError("need at least two sentences (history and a candidate), got " +
                                std::to_string(sentences.size()));
    Session session = runtime.make_session(topic);
    session.accept(sentences[0].text, sentences[0].speaker);
    for (std::size_t i = 1; i < sentences.size(); ++i) {
        const EvaluationTrace trace = session.evaluate_next(sentences[i].text);
        const nlohmann::json line = {{"index", i},
                                     {"p_nlu", trace.score.p_nlu.value()},
                                     {"F", trace.score.attention_term},
                                     {"residual", trace.score.residual_term},
                                     {"verdict", std::string(to_string(trace.score.verdict))}};
        std::cout << line.dump() << '\n';
        if (!no_accept) session.accept(sentences[i].text, sentences[i].speaker);
    }
    return 0;
}

int cmd_train_ood(const Overrides& o, const std::string& input, const std::string& out_path,
                  std::uint64_t seed, std::size_t trees, std::size_t psi) {
    const Runtime runtime(o.resolve());
    const std::vector<Sentence> sentences = read_conversation_file(input);
    if (sentences.size() < 2)
        throw InputDomainError("need at least two sentences to train, got " + std::to_string(sentences.size()));
    std::vector<std::string> texts;
    for (const Sentence& s : sentences) texts.push_back(s.text);
    const std::vector<Embedding> embeddings = runtime.encoder().encode_batch(texts);
    const OodModel model = train_ood(embeddings, {trees, psi, seed});
    save_model_file(model, out_path);
    const auto& s = model.sorted_scores;
    std::cout << "trained " << model.tree_count() << " trees on " << s.size() << " sentences (dim "
              << model.dim << ")\n"
              << "theta min " << s.front() << "  median " << s[s.size() / 2] << "  max " << s.back() << '\n';
    return 0;
}

int cmd_eval(const Overrides& o, const std::string& dataset_path, const std::string& experiment,
             const std::string& out_path, std::size_t segment_width, const std::vector<double>& band) {
    static const std::vector<std::string> kExperiments{"gap", "length", "residual"};
    if (std::find(kExperiments.begin(), kExperiments.end(), experiment) == kExperiments.end()) {
        std::cerr << "unknown experiment \"" << experiment << "\"; choose one of: gap, length, residual\n";
        return kExitInput;
    }
    if (band.size() != 2) throw ConfigError("--band takes two values: lo,hi");
    const Runtime runtime(o.resolve());
    std::ifstream in(dataset_path);
    if (!in) throw InputDomainError("cannot read dataset " + dataset_path);
    const std::vector<ConversationRecord> records = read_dataset(in);
    if (records.empty()) throw InputDomainError("dataset " + dataset_path + " is empty");

    const ReportHeader header{runtime.config().seed, config_digest(runtime.config())};
    nlohmann::json report;
    std::string table;
    if (experiment == "gap") {
        const GapReport r = run_gap_experiment(records, runtime.factory(), runtime.experiment_options());
        report = to_json(r, header);
        table = format_table(r);
    } else if (experiment == "length") {
        const LengthReport r =
            run_length_experiment(records, runtime.factory(), segment_width, runtime.experiment_options());
        report = to_json(r, header);
        table = format_table(r);
    } else {
        const ResidualReport r = run_residual_experiment(records, runtime.factory(), band[0], band[1]);
        if (r.warning) std::cerr << "warning: " << *r.warning << '\n';
        report = to_json(r, header);
        table = format_table(r);
    }
    write_text_file(out_path, report.dump(2) + "\n");
    std::cout << table;
    return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out_path, const std::string& topic_corpus,
              const std::string& background_corpus, std::size_t corpus_size) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read generator config " + config_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("generator config is not valid JSON: ") + e.what());
    }
    const GeneratorConfig config = generator_config_from_json(j);
    std::ostringstream dataset;
    const std::vector<ConversationRecord> records = generate(config);
    write_dataset(records, dataset);
    write_text_file(out_path, dataset.str());
    auto write_corpus = [&](const std::string& path, CorpusKind kind) {
        if (path.empty()) return;
        std::string lines;
        for (const std::string& s : generate_corpus(config, kind, corpus_size)) lines += s + "\n";
        write_text_file(path, lines);
    };
    write_corpus(topic_corpus, CorpusKind::topic);
    write_corpus(background_corpus, CorpusKind::background);
    std::cout << "wrote " << records.size() << " records to " << out_path << '\n';
    return 0;
}

int cmd_serve(const Overrides& o) {
    const Runtime runtime(o.resolve());
    const EvaluateService service(runtime);
    httplib::Server server;
    configure_server(server, service, runtime.config().service.max_concurrent);
    const auto& s = runtime.config().service;
    if (!server.bind_to_port(s.bind, s.port)) {
        std::cerr << "error: cannot bind " << s.bind << ":" << s.port << '\n';
        return kExitInfra;
    }
    std::cerr << "listening on " << s.bind << ":" << s.port << '\n';
    return server.listen_after_bind() ? 0 : kExitInfra;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topic-continuity scoring for conversations"};
    app.require_subcommand(1);
    Overrides overrides;

    auto* score = app.add_subcommand("score", "score each new sentence of a conversation");
    std::string score_input = "-", score_topic = "default";
    bool no_accept = false;
    score->add_option("input", score_input, "conversation file (one sentence per line, - for stdin)");
    score->add_option("--topic", score_topic, "topic identifier");
    score->add_flag("--no-accept", no_accept, "keep the history fixed to the first sentence");
    overrides.add_to(*score);

    auto* train = app.add_subcommand("train-ood", "train and persist an OOD model");
    std::string train_input, train_out;
    std::uint64_t train_seed = 0;
    std::size_t trees = 100, psi = 256;
    train->add_option("--input", train_input, "sentence file")->required();
    train->add_option("--out", train_out, "model output path")->required();
    train->add_option("--seed", train_seed, "training seed")->required();
    train->add_option("--trees", trees, "number of trees");
    train->add_option("--psi", psi, "subsample size");
    Overrides train_overrides;
    train->add_option("-c,--config", train_overrides.config_path, "JSON config file");
    train->add_option("--encoder", train_overrides.encoder, "stub | remote:<url>");

    auto* eval = app.add_subcommand("eval", "run an experiment over a dataset");
    std::string eval_dataset, eval_experiment, eval_out;
    std::size_t segment_width = 100;
    std::vector<double> band{0.4, 0.6};
    eval->add_option("--dataset", eval_dataset, "dataset file")->required();
    eval->add_option("--experiment", eval_experiment, "gap | length | residual")->required();
    eval->add_option("--out", eval_out, "report output path")->required();
    eval->add_option("--segment-width", segment_width, "length experiment segment width in tokens");
    eval->add_option("--band", band, "residual experiment band lo,hi")->delimiter(',');
    overrides.add_to(*eval);

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    std::string synth_config, synth_out, topic_corpus, background_corpus;
    std::size_t corpus_size = 2000;
    synth->add_option("--config", synth_config, "generator config file")->required();
    synth->add_option("--out", synth_out, "dataset output path")->required();
    synth->add_option("--topic-corpus", topic_corpus, "also write topic sentences for OOD training");
    synth->add_option("--background-corpus", background_corpus, "also write background sentences");
    synth->add_option("--corpus-size", corpus_size, "sentences per corpus");

    auto* serve = app.add_subcommand("serve", "run the HTTP evaluation service");
    overrides.add_to(*serve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*score) return cmd_score(overrides, score_input, score_topic, no_accept);
        if (*train) return cmd_train_ood(train_overrides, train_input, train_out, train_seed, trees, psi);
        if (*eval) return cmd_eval(overrides, eval_dataset, eval_experiment, eval_out, segment_width, band);
        if (*synth) return cmd_synth(synth_config, synth_out, topic_corpus, background_corpus, corpus_size);
        if (*serve) return cmd_serve(overrides);
    } catch (const BackendUnavailableError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInfra;
    } catch (const ProtocolError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInfra;
    } catch (const RecordNotFoundError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInfra;
    } catch (const EmptyResultError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitEmpty;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
