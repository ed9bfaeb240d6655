#pragma once

// RegressionModel: the trained network together with everything needed to
// apply it to raw covariates (feature schema, standardization statistics,
// response scale), and its JSON artifact format.

#include <span>
#include <string>
#include <vector>

#include "lshazard/data_io.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/network.hpp"

namespace lshazard {

inline constexpr int kModelSchemaVersion = 1;

struct HeadOutputs {
  double p = 0.5;
  double sigma = 1.0;  // eGPD scale in area-density units
};

struct RegressionModel {
  FeatureSchema schema;
  Standardization standardization;
  // Area densities are divided by this before entering the likelihood, so
  // the scale head works in standardized-response units.
  double response_scale = 1.0;
  NetworkParameters network;

  [[nodiscard]] double kappa() const { return network.kappa(); }
  [[nodiscard]] double xi() const { return network.xi(); }

  // eGPD of the area density given a predicted scale (original units).
  [[nodiscard]] EgpdParams intensity_params(double sigma) const { return {kappa(), sigma, xi()}; }

  // Smallest scale the model can emit, in original units.
  [[nodiscard]] double sigma_floor() const { return network.sigma_floor * response_scale; }

  [[nodiscard]] Matrix design_matrix(std::span<const SuYearRecord> records) const {
    Matrix x(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(schema.size()));
    std::vector<double> row(schema.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].covariates.size() != schema.size())
        throw DataError("record " + records[i].su_id + "/" + std::to_string(records[i].year) +
                        " does not match the model feature schema");
      standardization.apply(records[i].covariates, row);
      for (std::size_t j = 0; j < row.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return x;
  }

  [[nodiscard]] Matrix design_matrix(std::span<const std::vector<double>> raw) const {
    Matrix x(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(schema.size()));
    std::vector<double> row(schema.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i].size() != schema.size()) throw DataError("feature vector does not match the model feature schema");
      standardization.apply(raw[i], row);
      for (std::size_t j = 0; j < row.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return x;
  }

  // Inference-mode predictions for raw (unstandardized) covariate rows.
  [[nodiscard]] std::vector<HeadOutputs> predict(const Matrix& standardized) const {
    std::vector<HeadOutputs> out(static_cast<std::size_t>(standardized.rows()));
    if (out.empty()) return out;
    const auto o = forward(standardized, network, Mode::inference);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = {o.p(static_cast<Eigen::Index>(i)), o.sigma(static_cast<Eigen::Index>(i)) * response_scale};
    return out;
  }

  [[nodiscard]] std::vector<HeadOutputs> predict(std::span<const SuYearRecord> records) const {
    return predict(design_matrix(records));
  }
};

// Single-record convenience over an inference-mode forward pass.
[[nodiscard]] inline HeadOutputs predict_record(std::span<const double> raw_features, const RegressionModel& model) {
  std::vector<std::vector<double>> rows{std::vector<double>(raw_features.begin(), raw_features.end())};
  return model.predict(model.design_matrix(std::span<const std::vector<double>>(rows))).front();
}

namespace detail {

inline json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from(const json& j, Eigen::Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expected)
    throw DataError(std::string("model artifact: ") + what + " has wrong length");
  return Eigen::Map<const Vector>(v.data(), expected);
}

inline Matrix matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw DataError(std::string("model artifact: ") + what + " has wrong row count");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vector_from(j[static_cast<std::size_t>(r)], cols, what).transpose();
  return m;
}

}  // namespace detail

[[nodiscard]] inline json model_to_json(const RegressionModel& m) {
  const auto& net = m.network;
  json features = json::array();
  for (std::size_t i = 0; i < m.schema.size(); ++i) {
    json f = m.schema.features[i];
    f["mean"] = m.standardization.mean[i];
    f["sd"] = m.standardization.sd[i];
    features.push_back(std::move(f));
  }
  json blocks = json::array();
  for (const auto& b : net.blocks)
    blocks.push_back({{"weight", detail::matrix_rows(b.weight)},
                      {"bias", detail::vector_json(b.bias)},
                      {"bn_scale", detail::vector_json(b.bn_scale)},
                      {"bn_shift", detail::vector_json(b.bn_shift)},
                      {"running_mean", detail::vector_json(b.running_mean)},
                      {"running_var", detail::vector_json(b.running_var)}});
  return json{{"schema_version", kModelSchemaVersion},
              {"architecture", {{"input_width", net.input_width()}, {"blocks", net.blocks.size()}, {"width", net.width()}}},
              {"features", features},
              {"response_scale", m.response_scale},
              {"blocks", blocks},
              {"head_p", {{"weight", detail::vector_json(net.head_p.weight)}, {"bias", net.head_p.bias}}},
              {"head_sigma", {{"weight", detail::vector_json(net.head_sigma.weight)}, {"bias", net.head_sigma.bias}}},
              {"log_kappa", net.log_kappa},
              {"log_xi", net.log_xi},
              {"dropout_rate", net.dropout_rate},
              {"bn_momentum", net.bn_momentum},
              {"bn_epsilon", net.bn_epsilon},
              {"sigma_floor", net.sigma_floor}};
}

[[nodiscard]] inline RegressionModel model_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kModelSchemaVersion)
      throw DataError("model artifact: unsupported schema_version");
    RegressionModel m;
    const auto& arch = j.at("architecture");
    const auto in = arch.at("input_width").get<Eigen::Index>();
    const auto nblocks = arch.at("blocks").get<std::size_t>();
    const auto width = arch.at("width").get<Eigen::Index>();
    for (const auto& f : j.at("features")) {
      m.schema.features.push_back(f.get<FeatureSpec>());
      m.standardization.mean.push_back(f.at("mean").get<double>());
      m.standardization.sd.push_back(f.at("sd").get<double>());
    }
    if (static_cast<Eigen::Index>(m.schema.size()) != in)
      throw DataError("model artifact: feature count does not match input_width");
    m.response_scale = j.at("response_scale").get<double>();
    auto& net = m.network;
    const auto& blocks = j.at("blocks");
    if (blocks.size() != nblocks) throw DataError("model artifact: block count mismatch");
    for (std::size_t b = 0; b < nblocks; ++b) {
      const auto& jb = blocks[b];
      DenseBlock blk;
      blk.weight = detail::matrix_from(jb.at("weight"), b == 0 ? in : width, width, "weight");
      blk.bias = detail::vector_from(jb.at("bias"), width, "bias");
      blk.bn_scale = detail::vector_from(jb.at("bn_scale"), width, "bn_scale");
      blk.bn_shift = detail::vector_from(jb.at("bn_shift"), width, "bn_shift");
      blk.running_mean = detail::vector_from(jb.at("running_mean"), width, "running_mean");
      blk.running_var = detail::vector_from(jb.at("running_var"), width, "running_var");
      if ((blk.running_var.array() < 0.0).any()) throw DataError("model artifact: negative running variance");
      net.blocks.push_back(std::move(blk));
    }
    net.head_p.weight = detail::vector_from(j.at("head_p").at("weight"), width, "head_p.weight");
    net.head_p.bias = j.at("head_p").at("bias").get<double>();
    net.head_sigma.weight = detail::vector_from(j.at("head_sigma").at("weight"), width, "head_sigma.weight");
    net.head_sigma.bias = j.at("head_sigma").at("bias").get<double>();
    net.log_kappa = j.at("log_kappa").get<double>();
    net.log_xi = j.at("log_xi").get<double>();
    net.dropout_rate = j.at("dropout_rate").get<double>();
    net.bn_momentum = j.at("bn_momentum").get<double>();
    net.bn_epsilon = j.at("bn_epsilon").get<double>();
    net.sigma_floor = j.at("sigma_floor").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("model artifact: ") + e.what());
  }
}

inline void save_model(const RegressionModel& m, const std::string& path) { write_json_file(path, model_to_json(m)); }

[[nodiscard]] inline RegressionModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace lshazard
