#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "slq/pipeline.hpp"

namespace py = pybind11;
using namespace slq;

namespace {

Tensor<double> matrix_from_rows(const std::vector<std::vector<double>>& rows,
                                const char* what) {
  if (rows.empty()) throw InputError(std::string(what) + ": empty matrix");
  const int cols = static_cast<int>(rows[0].size());
  std::vector<double> values;
  values.reserve(rows.size() * rows[0].size());
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != cols) {
      throw InputError(std::string(what) + ": ragged rows");
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor<double>::from_values({static_cast<int>(rows.size()), cols},
                                     std::move(values));
}

std::vector<EmbeddingRecord> records_from_rows(
    const std::vector<std::vector<double>>& rows, Modality modality) {
  std::vector<EmbeddingRecord> records;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    records.push_back({static_cast<std::uint64_t>(i), modality, rows[i]});
  }
  return records;
}

EmbeddingSet set_from_rows(const std::vector<std::vector<double>>& images,
                           const std::vector<std::vector<double>>& texts) {
  EmbeddingSet set;
  set.images = records_from_rows(images, Modality::kImage);
  set.texts = records_from_rows(texts, Modality::kText);
  return set;
}

py::dict pair_to_dict(const DataPair& pair) {
  py::dict d;
  d["id"] = pair.id;
  d["tier"] = tier_name(pair.caption.tier);
  d["caption_tokens"] = pair.caption.tokens;
  std::vector<std::string> words;
  for (int tok : pair.caption.tokens) words.push_back(Vocab::instance().token(tok));
  d["caption_words"] = words;
  py::list cells;
  for (const auto& cell : pair.image.cells) {
    cells.append(py::make_tuple(cell.shape, cell.color, cell.count));
  }
  d["cells"] = cells;
  d["grid"] = pair.image.grid;
  if (pair.caption.tier == Tier::kReasoning) {
    d["dimension"] = dim_name(pair.caption.dimension);
  }
  return d;
}

py::list dataset_to_list(const PairedDataset& ds) {
  py::list out;
  for (const auto& pair : ds.pairs) out.append(pair_to_dict(pair));
  return out;
}

// Frozen backbone + readout handle for embedding from Python.
class Retriever {
 public:
  Retriever(const std::string& backbone_path, const std::string& adapter_path)
      : backbone_(Backbone<float>::load(backbone_path)) {
    auto adapter = load_adapter<float>(adapter_path, backbone_.config().d_model,
                                       backbone_.config().n_heads);
    readout_ = std::move(adapter.readout);
  }

  std::vector<double> encode_text(const std::vector<int>& tokens) const {
    auto content = backbone_.embed_text(tokens);
    auto z = encode_embedding(backbone_, readout_, content);
    return {z.values().begin(), z.values().end()};
  }

  std::vector<double> encode_image(
      const std::vector<std::tuple<int, int, int>>& cells, int grid) const {
    SynthImage image;
    image.grid = grid;
    for (const auto& [shape, color, count] : cells) {
      image.cells.push_back({shape, color, count});
    }
    auto content = backbone_.embed_image(image);
    auto z = encode_embedding(backbone_, readout_, content);
    return {z.values().begin(), z.values().end()};
  }

  int d_model() const { return backbone_.config().d_model; }

 private:
  Backbone<float> backbone_;
  Readout<float> readout_;
};

}  // namespace

PYBIND11_MODULE(_slq, m) {
  m.doc() = "Shared-latent-query retrieval: core operations and pipeline";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<IntegrityError>(m, "IntegrityError");
  py::register_exception<ContaminationError>(m, "ContaminationError");
  py::register_exception<DegenerateEmbeddingError>(m, "DegenerateEmbeddingError");

  // Losses over plain similarity matrices.
  m.def(
      "info_nce_i2t",
      [](const std::vector<std::vector<double>>& sim, double tau) {
        return info_nce_i2t(matrix_from_rows(sim, "info_nce"), tau);
      },
      py::arg("similarity"), py::arg("tau"));
  m.def(
      "info_nce_t2i",
      [](const std::vector<std::vector<double>>& sim, double tau) {
        return info_nce_t2i(matrix_from_rows(sim, "info_nce"), tau);
      },
      py::arg("similarity"), py::arg("tau"));
  m.def(
      "symmetric_loss",
      [](const std::vector<std::vector<double>>& sim, double tau) {
        return symmetric_loss(matrix_from_rows(sim, "symmetric_loss"), tau);
      },
      py::arg("similarity"), py::arg("tau"));

  // Retrieval / geometry metrics over index-aligned unit rows.
  m.def(
      "recall_at_k",
      [](const std::vector<std::vector<double>>& queries,
         const std::vector<std::vector<double>>& gallery, int k) {
        return recall_at_k(records_from_rows(queries, Modality::kText),
                           records_from_rows(gallery, Modality::kImage), k);
      },
      py::arg("queries"), py::arg("gallery"), py::arg("k"));
  m.def(
      "modality_gap",
      [](const std::vector<std::vector<double>>& images,
         const std::vector<std::vector<double>>& texts) {
        return modality_gap(set_from_rows(images, texts));
      },
      py::arg("images"), py::arg("texts"));
  m.def(
      "alignment",
      [](const std::vector<std::vector<double>>& images,
         const std::vector<std::vector<double>>& texts, double alpha) {
        return alignment_metric(set_from_rows(images, texts), alpha);
      },
      py::arg("images"), py::arg("texts"), py::arg("alpha") = 2.0);
  m.def(
      "uniformity",
      [](const std::vector<std::vector<double>>& vectors, double t) {
        return uniformity_metric(vectors, t);
      },
      py::arg("vectors"), py::arg("t") = 2.0);
  m.def(
      "pca",
      [](const std::vector<std::vector<double>>& vectors, int dims) {
        const PcaResult result = pca_project(vectors, dims);
        py::dict d;
        d["components"] = result.components;
        d["points"] = result.points;
        d["explained_variance"] = result.explained_variance;
        d["rank_deficient"] = result.rank_deficient;
        return d;
      },
      py::arg("vectors"), py::arg("dims") = 2);

  // Synthetic data.
  m.def(
      "gen_explicit",
      [](int n, std::uint64_t seed) { return dataset_to_list(gen_explicit(n, seed)); },
      py::arg("n"), py::arg("seed"));
  m.def(
      "gen_reasoning",
      [](int n, std::uint64_t seed, std::optional<std::array<double, 6>> mix) {
        return dataset_to_list(
            gen_reasoning(n, seed, mix.value_or(kDefaultDimensionMix)));
      },
      py::arg("n"), py::arg("seed"), py::arg("dimension_mix") = py::none());
  m.def("vocab_tokens", [] {
    std::vector<std::string> tokens;
    for (int i = 0; i < Vocab::instance().size(); ++i) {
      tokens.push_back(Vocab::instance().token(i));
    }
    return tokens;
  });
  m.def("token_id",
        [](const std::string& word) { return Vocab::instance().id(word); });

  // Pipeline commands driven by config text.
  m.def("default_config", [] { return render_config(RunConfig{}); });
  m.def(
      "run_pretrain",
      [](const std::string& config_text, const std::filesystem::path& out_dir,
         bool quiet) {
        pipeline::cmd_pretrain(parse_config_text(config_text), out_dir, quiet);
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("quiet") = true);
  m.def(
      "run_adapt",
      [](const std::string& config_text, const std::filesystem::path& backbone,
         const std::filesystem::path& out_dir, bool quiet, int steps) {
        pipeline::cmd_adapt(parse_config_text(config_text), backbone, out_dir,
                            quiet, steps);
      },
      py::arg("config_text"), py::arg("backbone"), py::arg("out_dir"),
      py::arg("quiet") = true, py::arg("steps") = -1);
  m.def(
      "run_eval",
      [](const std::string& config_text, const std::filesystem::path& backbone,
         const std::filesystem::path& adapter, const std::filesystem::path& out_dir,
         bool quiet) {
        pipeline::cmd_eval(parse_config_text(config_text), backbone, adapter,
                           out_dir, quiet);
      },
      py::arg("config_text"), py::arg("backbone"), py::arg("adapter"),
      py::arg("out_dir"), py::arg("quiet") = true);
  m.def(
      "run_ablate",
      [](const std::string& config_text, const std::string& axis,
         const std::filesystem::path& out_dir, bool quiet) {
        pipeline::cmd_ablate(parse_config_text(config_text), axis, out_dir, quiet);
      },
      py::arg("config_text"), py::arg("axis"), py::arg("out_dir"),
      py::arg("quiet") = true);
  m.def(
      "run_diagnose",
      [](const std::string& config_text, const std::filesystem::path& backbone,
         const std::filesystem::path& out_dir, bool quiet) {
        pipeline::cmd_diagnose(parse_config_text(config_text), backbone, out_dir,
                               quiet);
      },
      py::arg("config_text"), py::arg("backbone"), py::arg("out_dir"),
      py::arg("quiet") = true);
  m.def(
      "write_dataset",
      [](const std::string& config_text, const std::filesystem::path& out_path) {
        pipeline::cmd_gendata(parse_config_text(config_text), out_path);
      },
      py::arg("config_text"), py::arg("out_path"));

  py::class_<Retriever>(m, "Retriever")
      .def(py::init<const std::string&, const std::string&>(),
           py::arg("backbone_path"), py::arg("adapter_path"))
      .def("encode_text", &Retriever::encode_text, py::arg("tokens"))
      .def("encode_image", &Retriever::encode_image, py::arg("cells"),
           py::arg("grid") = 4)
      .def_property_readonly("d_model", &Retriever::d_model);
}
