#include "slq/export.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace slq {

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << body;
  if (!out) throw InputError("write failed: " + path.string());
}

}  // namespace

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

void write_embedding_dump(const std::filesystem::path& path,
                          const std::vector<EmbeddingRecord>& records) {
  std::string body;
  for (const auto& r : records) {
    body += std::to_string(r.id);
    body += r.modality == Modality::kImage ? " IMAGE [" : " TEXT [";
    for (std::size_t i = 0; i < r.z.size(); ++i) {
      if (i) body += ",";
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.9g", r.z[i]);
      body += buf;
    }
    body += "]\n";
  }
  write_text_file(path, body);
}

std::vector<EmbeddingRecord> read_embedding_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embedding dump: " + path.string());
  std::vector<EmbeddingRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EmbeddingRecord rec;
    std::string modality, vec;
    ls >> rec.id >> modality >> vec;
    if (modality == "IMAGE") {
      rec.modality = Modality::kImage;
    } else if (modality == "TEXT") {
      rec.modality = Modality::kText;
    } else {
      throw InputError("embedding dump: bad modality '" + modality + "'");
    }
    if (vec.size() < 2 || vec.front() != '[' || vec.back() != ']') {
      throw InputError("embedding dump: bad vector field");
    }
    std::stringstream vs(vec.substr(1, vec.size() - 2));
    std::string num;
    while (std::getline(vs, num, ',')) rec.z.push_back(std::stod(num));
    records.push_back(std::move(rec));
  }
  return records;
}

void write_retrieval_csv(const std::filesystem::path& path,
                         const std::vector<RetrievalReport>& reports,
                         const std::string& split) {
  if (reports.empty()) throw InputError("write_retrieval_csv: no reports");
  std::string body = "direction";
  for (int k : reports[0].k_list) body += ",r@" + std::to_string(k);
  body += ",n_queries,n_gallery,split\n";
  for (const auto& r : reports) {
    body += r.direction;
    for (double v : r.recall) body += "," + format_double(v);
    body += "," + std::to_string(r.n_queries) + "," + std::to_string(r.n_gallery) +
            "," + split + "\n";
  }
  write_text_file(path, body);
}

void write_geometry_csv(const std::filesystem::path& path,
                        const GeometryReport& report) {
  std::string body = "split,gap,alignment,uniformity_text,uniformity_image";
  for (std::size_t i = 0; i < report.pca.explained_variance.size(); ++i) {
    body += ",explained_var_" + std::to_string(i + 1);
  }
  body += ",rank_deficient\n";
  body += report.split + "," + format_double(report.gap) + "," +
          format_double(report.alignment) + "," +
          format_double(report.uniformity_text) + "," +
          format_double(report.uniformity_image);
  for (double v : report.pca.explained_variance) body += "," + format_double(v);
  body += report.pca.rank_deficient ? ",1\n" : ",0\n";
  write_text_file(path, body);
}

void write_pca_svg(const std::filesystem::path& path, const GeometryReport& report) {
  const int width = 640, height = 480;
  const int margin = 48;
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  for (std::size_t i = 0; i < report.pca.points.size(); ++i) {
    const auto& p = report.pca.points[i];
    if (i == 0 || p[0] < min_x) min_x = p[0];
    if (i == 0 || p[0] > max_x) max_x = p[0];
    if (i == 0 || p[1] < min_y) min_y = p[1];
    if (i == 0 || p[1] > max_y) max_y = p[1];
  }
  if (max_x - min_x < 1e-12) max_x = min_x + 1;
  if (max_y - min_y < 1e-12) max_y = min_y + 1;

  auto sx = [&](double x) {
    return margin + (x - min_x) / (max_x - min_x) * (width - 2 * margin);
  };
  auto sy = [&](double y) {
    return height - margin - (y - min_y) / (max_y - min_y) * (height - 2 * margin);
  };

  std::string body;
  char buf[256];
  body += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
          "viewBox=\"0 0 640 480\">\n";
  body += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                margin, height - margin, width - margin, height - margin);
  body += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                margin, margin, margin, height - margin);
  body += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-size=\"14\" text-anchor=\"middle\">PC1</text>\n",
                width / 2, height - 12);
  body += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%d\" font-size=\"14\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 16 %d)\">PC2</text>\n",
                height / 2, height / 2);
  body += buf;

  for (std::size_t i = 0; i < report.pca.points.size(); ++i) {
    const bool is_image = report.pca_class[i] == 0;
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.75\"/>\n",
                  sx(report.pca.points[i][0]), sy(report.pca.points[i][1]),
                  is_image ? "#d62728" : "#1f77b4");
    body += buf;
  }

  // Legend: image red, text blue.
  std::snprintf(buf, sizeof(buf),
                "<circle cx=\"%d\" cy=\"%d\" r=\"4\" fill=\"#d62728\"/>"
                "<text x=\"%d\" y=\"%d\" font-size=\"13\">image</text>\n",
                width - 130, margin + 4, width - 118, margin + 8);
  body += buf;
  std::snprintf(buf, sizeof(buf),
                "<circle cx=\"%d\" cy=\"%d\" r=\"4\" fill=\"#1f77b4\"/>"
                "<text x=\"%d\" y=\"%d\" font-size=\"13\">text</text>\n",
                width - 130, margin + 24, width - 118, margin + 28);
  body += buf;
  body += "</svg>\n";
  write_text_file(path, body);
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows) {
  std::string body =
      "axis,setting,data_seed,r1_i2t,r1_t2i,r5_i2t,r5_t2i,mean_recall\n";
  for (const auto& r : rows) {
    body += r.axis + "," + r.setting + "," + std::to_string(r.data_seed) + "," +
            format_double(r.r1_i2t) + "," + format_double(r.r1_t2i) + "," +
            format_double(r.r5_i2t) + "," + format_double(r.r5_t2i) + "," +
            format_double(r.mean_recall) + "\n";
  }
  write_text_file(path, body);
}

TrainLogWriter::TrainLogWriter(const std::filesystem::path& path,
                               const std::string& header)
    : path_(path) {
  if (!header.empty()) buffer_ = header + "\n";
}

void TrainLogWriter::log_step(int step, double loss, double tau, double lr,
                              double grad_norm) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "step=%d loss=%.6f tau=%.6f lr=%.8f grad_norm=%.6f\n", step, loss,
                tau, lr, grad_norm);
  buffer_ += buf;
}

void TrainLogWriter::close() {
  write_text_file(path_, buffer_);
}

void write_diagnose_csv(const std::filesystem::path& path,
                        const std::vector<DiagnoseTierRow>& rows) {
  std::string body = "tier,readout,r@1,mean_margin\n";
  for (const auto& r : rows) {
    body += r.tier + "," + r.readout + "," + format_double(r.r1) + "," +
            format_double(r.mean_margin) + "\n";
  }
  write_text_file(path, body);
}

void write_margins_csv(const std::filesystem::path& path,
                       const std::vector<MarginRow>& rows) {
  std::string body = "tier,readout,query_id,margin,correct\n";
  for (const auto& r : rows) {
    body += r.tier + "," + r.readout + "," + std::to_string(r.query_id) + "," +
            format_double(r.margin) + "," + (r.correct ? "1" : "0") + "\n";
  }
  write_text_file(path, body);
}

}  // namespace slq
