#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cacophony/cli.hpp"
#include "cacophony/eval.hpp"
#include "cacophony/gradcheck.hpp"
#include "cacophony/mel.hpp"
#include "cacophony/optim.hpp"
#include "cacophony/rng.hpp"
#include "cacophony/train.hpp"
#include "cacophony/wav.hpp"

#include <json.hpp>

namespace py = pybind11;
using namespace cacophony;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from(shape, std::move(data));
}

py::array_t<double> numpy_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

struct PyCheckpoint {
    ParamStore params;
    ModelConfig model;
    Vocab vocab;
    std::string stage;
};

PyCheckpoint load_py_checkpoint(const std::string& base, const std::string& vocab_path) {
    LoadedCheckpoint ck = load_checkpoint(base);
    PyCheckpoint out;
    for (const auto& e : ck.params.entries()) out.params.add(e.name, e.tensor, e.decay);
    out.model = ModelConfig::from_json(ck.config.contains("model") ? ck.config.at("model") : ck.config);
    out.stage = ck.stage;
    if (!vocab_path.empty()) {
        out.vocab = Vocab::load(vocab_path);
        if (out.vocab.size() != out.model.vocab_size)
            throw std::runtime_error("vocab file does not match checkpoint vocab size");
    }
    return out;
}

TrainConfig config_from_json_str(const std::string& text) {
    TrainConfig base;
    nlohmann::json merged = base.to_json();
    merged.merge_patch(nlohmann::json::parse(text));
    return TrainConfig::from_json(merged);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cacophony: two-stage audio-text training at desk scale";

    m.def("mel_spectrogram", [](const std::vector<double>& samples) {
        MelFrames mel = mel_spectrogram(samples);
        py::array_t<double> out({static_cast<py::ssize_t>(mel.n_frames), static_cast<py::ssize_t>(kMelBands)});
        std::copy(mel.v.begin(), mel.v.end(), out.mutable_data());
        return out;
    });

    m.def("patchify", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mel) {
        if (mel.ndim() != 2 || mel.shape(1) != kMelBands)
            throw std::invalid_argument("patchify: expected [frames x 128]");
        MelFrames frames;
        frames.n_frames = static_cast<int>(mel.shape(0));
        frames.v.assign(mel.data(), mel.data() + mel.size());
        PatchGrid grid = patchify(frames);
        py::dict out;
        out["patches"] = numpy_from_tensor(grid.patches);
        out["t_patches"] = grid.t_patches;
        out["f_patches"] = grid.f_patches;
        out["means"] = grid.means;
        out["stds"] = grid.stds;
        return out;
    });

    m.def(
        "make_mask_plan",
        [](int n, const std::string& stage, int target_len, double mask_ratio, uint64_t seed) {
            MaskPlan plan = make_mask_plan(n, stage == "mae" ? Stage::mae : Stage::clap, target_len, mask_ratio, seed);
            py::dict out;
            out["kept"] = plan.kept;
            out["masked"] = plan.masked;
            out["padded"] = plan.padded;
            return out;
        },
        py::arg("n"), py::arg("stage"), py::arg("target_len") = 0, py::arg("mask_ratio") = 0.8, py::arg("seed") = 0);

    m.def("load_wav", &load_wav);
    m.def("write_wav", &write_wav);

    m.def(
        "info_nce",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& audio,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& text, double tau) {
            return info_nce({tensor_from_numpy(audio), tensor_from_numpy(text)}, tau);
        },
        py::arg("audio"), py::arg("text"), py::arg("tau") = 1.0);

    m.def("schedule_lr", [](int64_t step, int warmup, int total, double peak, double final_lr) {
        return schedule_lr(step, {warmup, total, peak, final_lr});
    });

    m.def("sam_perturb", [](const std::vector<double>& grad, double rho) {
        ParamStore ps;
        Tensor& w = ps.add("w", Tensor::zeros({static_cast<int>(grad.size())}, true), false);
        auto& g = w.grad();
        for (size_t i = 0; i < grad.size(); ++i) g[i] = grad[i];
        return sam_perturb(ps, rho)[0];
    });

    m.def(
        "generate_corpus",
        [](uint64_t seed, int n, double dur_min, double dur_max, int max_events, const std::string& out_dir) {
            CorpusSpec spec;
            spec.seed = seed;
            spec.n = n;
            spec.dur_min = dur_min;
            spec.dur_max = dur_max;
            spec.max_events = max_events;
            SyntheticCorpus corpus = generate_corpus(spec, out_dir);
            py::list items;
            for (const auto& item : corpus.items) {
                py::dict d;
                d["wav_path"] = item.wav_path;
                d["caption"] = item.caption;
                items.append(d);
            }
            return items;
        },
        py::arg("seed"), py::arg("n"), py::arg("dur_min") = 1.0, py::arg("dur_max") = 3.0, py::arg("max_events") = 3,
        py::arg("out_dir"));

    m.def(
        "train_mae",
        [](const std::string& corpus_manifest, const std::string& config_json) {
            TrainConfig cfg = config_from_json_str(config_json);
            cfg.stage = "mae";
            TrainResult res = stage1_train(cfg, load_manifest(corpus_manifest));
            py::dict out;
            out["checkpoint"] = res.checkpoint_base;
            out["encoder_checkpoint"] = res.encoder_base;
            out["metrics_csv"] = res.metrics_path;
            out["final_loss"] = res.metrics.empty() ? 0.0 : res.metrics.back().loss_total;
            return out;
        },
        py::arg("corpus_manifest"), py::arg("config_json") = "{}");

    m.def(
        "train_clap",
        [](const std::string& corpus_manifest, const std::string& config_json) {
            TrainConfig cfg = config_from_json_str(config_json);
            cfg.stage = "clap";
            TrainResult res = stage2_train(cfg, load_manifest(corpus_manifest));
            py::dict out;
            out["checkpoint"] = res.checkpoint_base;
            out["metrics_csv"] = res.metrics_path;
            out["final_loss"] = res.metrics.empty() ? 0.0 : res.metrics.back().loss_total;
            return out;
        },
        py::arg("corpus_manifest"), py::arg("config_json") = "{}");

    py::class_<PyCheckpoint>(m, "Checkpoint")
        .def_property_readonly("stage", [](const PyCheckpoint& c) { return c.stage; })
        .def("embed_corpus",
             [](PyCheckpoint& c, const std::string& corpus_manifest, int patch_budget, uint64_t seed) {
                 EvalConfig ecfg;
                 ecfg.patch_budget = patch_budget;
                 ecfg.seed = seed;
                 EmbeddingBatch batch = embed_corpus(load_manifest(corpus_manifest), c.params, c.model, c.vocab, ecfg);
                 return py::make_tuple(numpy_from_tensor(batch.audio), numpy_from_tensor(batch.text));
             },
             py::arg("corpus_manifest"), py::arg("patch_budget") = 512, py::arg("seed") = 0)
        .def("embed_text",
             [](PyCheckpoint& c, const std::string& text) {
                 return numpy_from_tensor(embed_text(text, c.params, c.model, c.vocab));
             })
        .def("caption",
             [](PyCheckpoint& c, const std::string& wav_path, double temperature, int max_len, uint64_t seed) {
                 TokenSequence seq =
                     generate_caption(load_wav(wav_path), c.params, c.model, temperature, max_len, seed);
                 return detokenize(seq, c.vocab);
             },
             py::arg("wav_path"), py::arg("temperature") = 0.1, py::arg("max_len") = 20, py::arg("seed") = 0);

    m.def("load_checkpoint", &load_py_checkpoint, py::arg("base_path"), py::arg("vocab_path") = "");

    m.def(
        "retrieval_eval",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& audio,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& text, const std::vector<int>& ks) {
            auto [t2a, a2t] = retrieval_eval({tensor_from_numpy(audio), tensor_from_numpy(text)}, ks);
            py::dict out;
            out["text_to_audio"] = py::dict(py::arg("ks") = t2a.ks, py::arg("recall") = t2a.recall);
            out["audio_to_text"] = py::dict(py::arg("ks") = a2t.ks, py::arg("recall") = a2t.recall);
            return out;
        },
        py::arg("audio"), py::arg("text"), py::arg("ks") = std::vector<int>{1, 5, 10});

    m.def("modality_gap",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& audio,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& text) {
              GapReport rep = modality_gap({tensor_from_numpy(audio), tensor_from_numpy(text)});
              return py::make_tuple(rep.gap, rep.magnitude);
          });

    m.def("gradcheck_primitives", []() {
        PrecisionScope f64(Precision::f64);
        Rng rng(1);
        Tensor point = Tensor::zeros({3, 4});
        for (auto& v : point.data()) v = rng.gaussian();
        return grad_check([](const Tensor& x) { return mean(mul(softmax(x), x)); }, point);
    });

    m.def("cli", [](const std::vector<std::string>& args) { return cli_run(args); });

    m.attr("SAMPLE_RATE") = kSampleRate;
    m.attr("MEL_BANDS") = kMelBands;
    m.attr("PATCH_DIM") = kPatchDim;
}
