// amalgam-fixture: emit the demo models and synthetic datasets used in the
// README walkthrough and the test suites.

#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "amalgam/amalgam.hpp"

using namespace amalgam;

int main(int argc, char** argv) {
    CLI::App app{"demo model and dataset generator"};
    app.require_subcommand(1);

    struct {
        std::string out;
        uint64_t seed = 1;
        int64_t img = 28, channels = 1, classes = 10;
        int64_t vocab = 1000, len = 20, embed = 32;
    } m;
    CLI::App* lenet = app.add_subcommand("lenet", "2 conv + 2 linear image classifier");
    lenet->add_option("--out", m.out, "model path (.json)")->required();
    lenet->add_option("--seed", m.seed);
    lenet->add_option("--img", m.img);
    lenet->add_option("--classes", m.classes);

    CLI::App* tiny = app.add_subcommand("tiny", "1 conv + 1 linear attack target");
    tiny->add_option("--out", m.out, "model path (.json)")->required();
    tiny->add_option("--seed", m.seed);
    tiny->add_option("--img", m.img);
    tiny->add_option("--classes", m.classes);

    CLI::App* textm = app.add_subcommand("text-model", "embedding + mean pool + linear");
    textm->add_option("--out", m.out, "model path (.json)")->required();
    textm->add_option("--seed", m.seed);
    textm->add_option("--vocab", m.vocab);
    textm->add_option("--len", m.len);
    textm->add_option("--embed", m.embed);
    textm->add_option("--classes", m.classes);

    struct {
        std::string out;
        uint64_t seed = 1;
        int64_t n = 256, classes = 10, channels = 1, h = 28, w = 28;
        int64_t vocab = 1000, len = 20;
    } d;
    CLI::App* images = app.add_subcommand("images", "synthetic class-blob image dataset");
    images->add_option("--out", d.out, "dataset path (.amlg)")->required();
    images->add_option("--n", d.n);
    images->add_option("--classes", d.classes);
    images->add_option("--channels", d.channels);
    images->add_option("--height", d.h);
    images->add_option("--width", d.w);
    images->add_option("--seed", d.seed);

    CLI::App* textd = app.add_subcommand("text", "synthetic class-band token dataset");
    textd->add_option("--out", d.out, "dataset path (.amlg)")->required();
    textd->add_option("--n", d.n);
    textd->add_option("--classes", d.classes);
    textd->add_option("--vocab", d.vocab);
    textd->add_option("--len", d.len);
    textd->add_option("--seed", d.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (lenet->parsed() || tiny->parsed() || textm->parsed()) {
            ModelGraph g;
            if (lenet->parsed())
                g = lenet_mini(m.channels, m.img, m.classes);
            else if (tiny->parsed())
                g = tiny_cnn(m.img == 28 ? 14 : m.img, m.classes);
            else
                g = text_classifier(m.vocab, m.len, m.embed, m.classes);
            serialize_model(g, init_params(g, m.seed), m.out);
            std::printf("%s model (%lld parameters) -> %s\n",
                        app.get_subcommands().front()->get_name().c_str(),
                        (long long)param_count(g), m.out.c_str());
        } else if (images->parsed()) {
            save_dataset(d.out, synth_images(d.n, d.classes, d.channels, d.h, d.w, d.seed));
            std::printf("images dataset (%lld samples) -> %s\n", (long long)d.n, d.out.c_str());
        } else if (textd->parsed()) {
            save_dataset(d.out, synth_text(d.n, d.classes, d.vocab, d.len, d.seed));
            std::printf("text dataset (%lld samples) -> %s\n", (long long)d.n, d.out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
