// amalgam: obfuscated neural-network training pipeline.
//
// Subcommands: augment-data, augment-model, train, extract, evaluate,
// report, attack. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "amalgam/amalgam.hpp"

namespace fs = std::filesystem;
using namespace amalgam;

namespace {

struct NoiseFlags {
    std::string kind = "uniform";
    double param = 0.0;
    std::string file;

    NoiseConfig to_config(uint64_t seed = 0) const {
        NoiseConfig cfg;
        cfg.kind = noise_kind_from_string(kind);
        cfg.param = param;
        cfg.file = file;
        cfg.seed = seed;
        if (cfg.kind == NoiseConfig::Kind::file && file.empty())
            throw CLI::ValidationError("--noise file requires --noise-file");
        return cfg;
    }
};

void add_noise_flags(CLI::App* cmd, NoiseFlags& noise) {
    cmd->add_option("--noise", noise.kind, "noise kind: uniform|gaussian|laplace|file")
        ->check(CLI::IsMember({"uniform", "gaussian", "laplace", "file"}));
    cmd->add_option("--noise-param", noise.param, "sigma (gaussian) or scale b (laplace)");
    cmd->add_option("--noise-file", noise.file, "value file for --noise file");
}

// --cloud-dir prefixes relative cloud-bound outputs; the secret bundle must
// never land inside it.
std::string resolve_out(const std::string& out, const std::string& cloud_dir) {
    if (cloud_dir.empty() || fs::path(out).is_absolute()) return out;
    fs::create_directories(cloud_dir);
    return (fs::path(cloud_dir) / out).string();
}

void check_secret_separation(const std::string& secret, const std::string& cloud_dir) {
    if (cloud_dir.empty()) return;
    const fs::path sp = fs::weakly_canonical(fs::absolute(secret));
    const fs::path cd = fs::weakly_canonical(fs::absolute(cloud_dir));
    auto it = std::search(sp.begin(), sp.end(), cd.begin(), cd.end());
    if (it == sp.begin())
        throw CLI::ValidationError("--secret must not point inside --cloud-dir");
}

std::vector<int64_t> parse_shape(const std::string& text) {
    std::vector<int64_t> dims;
    std::string cur;
    for (char ch : text + "x") {
        if (ch == 'x' || ch == 'X') {
            if (cur.empty()) throw CLI::ValidationError("--shape expects HxW or HxWxC");
            dims.push_back(std::stoll(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (dims.size() != 2 && dims.size() != 3)
        throw CLI::ValidationError("--shape expects HxW or HxWxC");
    return dims;
}

void write_json_out(const std::string& path, const nlohmann::json& j) {
    if (path.empty()) return;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open --json-out path '" + path + "'");
    f << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"obfuscated neural-network training"};
    app.require_subcommand(1);

    // ---- augment-data ----
    struct {
        std::string in, out, secret, cloud_dir;
        double alpha = 0.5;
        uint64_t seed = 0;
        NoiseFlags noise;
    } ad;
    CLI::App* augment_data = app.add_subcommand(
        "augment-data", "insert noise rows/columns (or token positions) into a dataset");
    augment_data->add_option("--in", ad.in, "input dataset (.amlg)")->required();
    augment_data->add_option("--out", ad.out, "augmented dataset path")->required();
    augment_data->add_option("--secret", ad.secret, "position-secret bundle path (local only)")
        ->required();
    augment_data->add_option("--alpha", ad.alpha, "augmentation amount")->check(CLI::NonNegativeNumber);
    augment_data->add_option("--seed", ad.seed, "position/noise seed");
    augment_data->add_option("--cloud-dir", ad.cloud_dir, "directory for cloud-bound outputs");
    add_noise_flags(augment_data, ad.noise);

    // ---- augment-model ----
    struct {
        std::string model, out, secret, cloud_dir;
        double alpha = 0.5;
        int subnets = 3;
        int cross_links = 1;
        uint64_t seed = 0;
        NoiseFlags noise;
    } am;
    CLI::App* augment_model_cmd = app.add_subcommand(
        "augment-model", "wrap a model in decoy sub-networks with skip-input layers");
    augment_model_cmd->add_option("--model", am.model, "original model (.json)")->required();
    augment_model_cmd->add_option("--out", am.out, "augmented model path (.json)")->required();
    augment_model_cmd
        ->add_option("--secret", am.secret, "secret bundle path (positions in, full bundle out)")
        ->required();
    augment_model_cmd->add_option("--alpha", am.alpha, "augmentation amount")
        ->check(CLI::NonNegativeNumber);
    augment_model_cmd->add_option("--subnets", am.subnets, "decoy sub-network count (default 3)");
    augment_model_cmd->add_option("--cross-links", am.cross_links, "cross links per decoy");
    augment_model_cmd->add_option("--seed", am.seed, "augmentation seed");
    augment_model_cmd->add_option("--cloud-dir", am.cloud_dir, "directory for cloud-bound outputs");
    add_noise_flags(augment_model_cmd, am.noise);

    // ---- train ----
    struct {
        std::string model, data, out, metrics;
        TrainConfig cfg;
    } tr;
    CLI::App* train_cmd = app.add_subcommand("train", "minibatch SGD over all heads");
    train_cmd->add_option("--model", tr.model, "model to train (.json)")->required();
    train_cmd->add_option("--data", tr.data, "training dataset (.amlg)")->required();
    train_cmd->add_option("--out", tr.out, "trained model path (.json)")->required();
    train_cmd->add_option("--metrics", tr.metrics, "per-step metrics CSV path");
    train_cmd->add_option("--epochs", tr.cfg.epochs, "epochs (default 10)");
    train_cmd->add_option("--lr", tr.cfg.lr, "learning rate (default 0.001)");
    train_cmd->add_option("--batch", tr.cfg.batch, "batch size (default 128)");
    train_cmd->add_option("--seed", tr.cfg.seed, "shuffle seed");
    train_cmd->add_flag("--deterministic,!--no-deterministic", tr.cfg.deterministic,
                        "bit-reproducible mode (default on)");

    // ---- extract ----
    struct {
        std::string model, secret, original, out, json_out;
    } ex;
    CLI::App* extract_cmd =
        app.add_subcommand("extract", "recover the original model from a trained augmented model");
    extract_cmd->add_option("--model", ex.model, "trained augmented model (.json)")->required();
    extract_cmd->add_option("--secret", ex.secret, "secret bundle")->required();
    extract_cmd->add_option("--original", ex.original, "original model definition (.json)")
        ->required();
    extract_cmd->add_option("--out", ex.out, "extracted model path (.json)")->required();
    extract_cmd->add_option("--json-out", ex.json_out, "machine-readable report path");

    // ---- evaluate ----
    struct {
        std::string model, data, json_out;
        size_t head = 0;
    } ev;
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "loss and accuracy of one head");
    evaluate_cmd->add_option("--model", ev.model, "model (.json)")->required();
    evaluate_cmd->add_option("--data", ev.data, "dataset (.amlg)")->required();
    evaluate_cmd->add_option("--head", ev.head, "head index (default 0)");
    evaluate_cmd->add_option("--json-out", ev.json_out, "machine-readable result path");

    // ---- report ----
    struct {
        double alpha = 0.5;
        std::string shape, modality = "image", model, csv, json_out;
        int64_t length = 0;
        int subnets = 3;
    } rp;
    CLI::App* report_cmd =
        app.add_subcommand("report", "privacy/overhead trade-off and search spaces");
    report_cmd->add_option("--alpha", rp.alpha, "augmentation amount")->required();
    report_cmd->add_option("--shape", rp.shape, "image shape HxW or HxWxC");
    report_cmd->add_option("--length", rp.length, "text sequence length");
    report_cmd->add_option("--modality", rp.modality, "image|text");
    report_cmd->add_option("--model", rp.model, "model (.json) for parameter counts");
    report_cmd->add_option("--subnets", rp.subnets, "decoy count for the parameter report");
    report_cmd->add_option("--csv", rp.csv, "write a 101-point trade-off curve CSV");
    report_cmd->add_option("--json-out", rp.json_out, "machine-readable report path");

    // ---- attack ----
    struct {
        std::string model, data, secret, out, json_out;
        AttackConfig cfg;
    } at;
    CLI::App* attack_cmd =
        app.add_subcommand("attack", "gradient-leakage attack (iDLG label + DLG reconstruction)");
    attack_cmd->add_option("--model", at.model, "victim model (.json)")->required();
    attack_cmd->add_option("--data", at.data, "dataset the victim gradient comes from")->required();
    attack_cmd->add_option("--sample", at.cfg.sample_index, "victim sample index");
    attack_cmd->add_option("--iterations", at.cfg.iterations, "attack iterations (default 200)");
    attack_cmd->add_option("--step", at.cfg.step, "initial attack step size");
    attack_cmd->add_option("--fd-step", at.cfg.fd_step, "finite-difference step");
    attack_cmd->add_option("--seed", at.cfg.seed, "dummy-input seed");
    attack_cmd->add_option("--secret", at.secret,
                           "secret bundle; scores reconstruction on the original region");
    attack_cmd->add_option("--out", at.out, "output prefix for reconstruction + history");
    attack_cmd->add_option("--json-out", at.json_out, "machine-readable result path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (augment_data->parsed()) {
            check_secret_separation(ad.secret, ad.cloud_dir);
            DatasetContainer data = load_dataset(ad.in);
            auto [aug, secret] = augment_dataset(data, ad.alpha, ad.noise.to_config(), ad.seed);
            const std::string out = resolve_out(ad.out, ad.cloud_dir);
            save_dataset(out, aug);
            SecretBundle bundle;
            bundle.positions = secret;
            bundle.seeds = {int64_t(ad.seed)};
            save_secret(ad.secret, bundle);
            std::printf("augmented %lld samples (alpha %.2f) -> %s\n", (long long)aug.size(),
                        ad.alpha, out.c_str());
            std::printf("position secret -> %s (local only)\n", ad.secret.c_str());
        } else if (augment_model_cmd->parsed()) {
            check_secret_separation(am.secret, am.cloud_dir);
            auto [graph, params] = deserialize_model(am.model);
            SecretBundle bundle = load_secret(am.secret);
            AugmentationPlan plan = plan_subnets(graph, am.alpha, am.subnets, am.seed);
            plan.noise = am.noise.to_config();
            plan.cross_link_count = am.cross_links;
            AugmentResult res = augment_model(graph, params, plan, bundle.positions);
            const std::string out = resolve_out(am.out, am.cloud_dir);
            serialize_model(res.graph, res.params, out);
            save_secret(am.secret, res.bundle);
            std::printf("augmented model: %lld -> %lld parameters (%d decoys) -> %s\n",
                        (long long)param_count(graph), (long long)param_count(res.graph),
                        plan.subnets, out.c_str());
            std::printf("secret bundle -> %s (local only)\n", am.secret.c_str());
        } else if (train_cmd->parsed()) {
            auto [graph, params] = deserialize_model(tr.model);
            DatasetContainer data = load_dataset(tr.data);
            const auto t0 = std::chrono::steady_clock::now();
            auto [trained, log] = train(graph, std::move(params), data, tr.cfg);
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            serialize_model(graph, trained, tr.out);
            if (!tr.metrics.empty()) {
                std::ofstream f(tr.metrics, std::ios::trunc);
                f << log.to_csv();
            }
            const StepRecord& last = log.records.back();
            std::printf("trained %d epochs in %.1fs, final loss %.4f -> %s\n", tr.cfg.epochs, secs,
                        last.loss_total, tr.out.c_str());
        } else if (extract_cmd->parsed()) {
            auto [mprime, pprime] = deserialize_model(ex.model);
            auto [original_def, original_params] = deserialize_model(ex.original);
            SecretBundle bundle = load_secret(ex.secret);
            auto [extracted, report] = extract(mprime, pprime, bundle, original_def);
            serialize_model(original_def, extracted, ex.out);
            std::fputs(report.to_text().c_str(), stdout);
            std::printf("extracted model -> %s\n", ex.out.c_str());
            write_json_out(ex.json_out, {{"layers_copied", report.layers_copied},
                                         {"parameter_count", report.parameter_count},
                                         {"checksum_match", report.checksum_match},
                                         {"elapsed_ms", report.elapsed_ms}});
        } else if (evaluate_cmd->parsed()) {
            auto [graph, params] = deserialize_model(ev.model);
            DatasetContainer data = load_dataset(ev.data);
            auto [loss, acc] = evaluate(graph, params, data, ev.head);
            std::printf("head %zu: loss %.6f accuracy %.4f (%lld samples)\n", ev.head, loss, acc,
                        (long long)data.size());
            write_json_out(ev.json_out,
                           {{"head", ev.head}, {"loss", loss}, {"accuracy", acc}});
        } else if (report_cmd->parsed()) {
            std::string modality = rp.modality;
            int64_t channels = 1;
            std::vector<int64_t> dims;
            if (!rp.shape.empty()) {
                modality = "image";
                std::vector<int64_t> hwc = parse_shape(rp.shape);
                dims = {hwc[0], hwc[1]};
                channels = hwc.size() == 3 ? hwc[2] : 1;
            } else if (rp.length > 0) {
                modality = "text";
                dims = {rp.length};
            } else {
                throw CLI::ValidationError("report needs --shape or --length");
            }
            int64_t p = 0, a_m = 0;
            if (!rp.model.empty()) {
                auto [graph, params] = deserialize_model(rp.model);
                p = param_count(graph);
                a_m = std::llround(rp.alpha * double(p));
            }
            PrivacyReport rep =
                make_report(modality, channels, dims, rp.alpha, p, a_m, p > 0 ? rp.subnets : 0);
            std::fputs(report_text(rep).c_str(), stdout);
            if (!rp.csv.empty()) {
                std::ofstream f(rp.csv, std::ios::trunc);
                f << privacy_curve_csv(modality, channels, dims, alpha_grid(0.0, 1.0, 101));
            }
            nlohmann::json j = {{"alpha", rep.alpha},
                                {"epsilon", rep.epsilon},
                                {"rho", rep.rho},
                                {"log10_space_pp", rep.per_pixel_log10},
                                {"log10_space_struct", rep.structural_log10},
                                {"modality", rep.modality},
                                {"params_original", rep.params_original},
                                {"params_added", rep.params_added},
                                {"subnets", rep.subnets}};
            if (rep.arrangements) j["arrangements"] = *rep.arrangements;
            write_json_out(rp.json_out, j);
        } else if (attack_cmd->parsed()) {
            auto [graph, params] = deserialize_model(at.model);
            DatasetContainer data = load_dataset(at.data);
            if (at.cfg.sample_index < 0 || at.cfg.sample_index >= data.size())
                throw std::runtime_error("attack: --sample out of range");
            const Tensor victim_input = data.sample(at.cfg.sample_index);
            const int64_t true_label = data.label(at.cfg.sample_index);
            NamedGrads victim = sample_gradients(graph, params, victim_input, true_label);
            const int64_t label = idlg_label(victim, graph, 0);

            Tensor ground_truth = victim_input;
            PositionSecret secret;
            const PositionSecret* secret_ptr = nullptr;
            if (!at.secret.empty()) {
                secret = load_secret(at.secret).positions;
                DatasetContainer plain = deaugment(data, secret);
                ground_truth = plain.sample(at.cfg.sample_index);
                secret_ptr = &secret;
            }
            AttackResult res =
                dlg_reconstruct(graph, params, victim, label, at.cfg, &ground_truth, secret_ptr);
            std::printf("inferred label %lld (true %lld)\n", (long long)res.inferred_label,
                        (long long)true_label);
            std::printf("objective %.6g -> %.6g over %d iterations\n",
                        res.objective_history.front(), res.objective_history.back(),
                        res.iterations_run);
            std::printf("original-region reconstruction MSE %.6g\n", res.mse_original_region);
            if (!at.out.empty()) {
                write_amlg(at.out + ".recon.amlg", {{"reconstruction", res.reconstructed}});
                std::ofstream f(at.out + ".history.csv", std::ios::trunc);
                f << "iteration,objective\n";
                for (size_t i = 0; i < res.objective_history.size(); ++i)
                    f << i << "," << res.objective_history[i] << "\n";
            }
            write_json_out(at.json_out, {{"label", res.inferred_label},
                                         {"true_label", true_label},
                                         {"objective_initial", res.objective_history.front()},
                                         {"objective_final", res.objective_history.back()},
                                         {"mse_original_region", res.mse_original_region},
                                         {"iterations", res.iterations_run}});
        }
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
