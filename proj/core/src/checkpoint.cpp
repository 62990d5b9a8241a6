#include "tandem/checkpoint.hpp"

#include "tandem/binio.hpp"
#include "tandem/error.hpp"
#include "tandem/hash.hpp"

namespace tandem {

namespace {

constexpr char kMagic[9] = "TNDMCKPT";
constexpr std::uint32_t kVersion = 1;

void write_mat(BinWriter& w, const std::string& name, const Mat& m, int dtype) {
  w.str(name);
  w.value<std::int32_t>(m.rows());
  w.value<std::int32_t>(m.cols());
  if (dtype == 8) {
    w.bytes(m.data(), m.size() * sizeof(double));
  } else {
    for (std::size_t i = 0; i < m.size(); ++i)
      w.value<float>(static_cast<float>(m.data()[i]));
  }
}

Mat read_mat(BinReader& r, std::string* name_out, int dtype) {
  *name_out = r.str();
  const auto rows = r.value<std::int32_t>();
  const auto cols = r.value<std::int32_t>();
  if (rows < 0 || cols < 0 || static_cast<long long>(rows) * cols > (1ll << 28))
    throw DataError("checkpoint: implausible shape in " + r.path());
  Mat m(rows, cols);
  if (dtype == 8) {
    r.bytes(m.data(), m.size() * sizeof(double));
  } else {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = r.value<float>();
  }
  return m;
}

CheckpointMeta read_header(BinReader& r) {
  r.expect_magic(kMagic);
  CheckpointMeta meta;
  meta.version = r.value<std::uint32_t>();
  if (meta.version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(meta.version) +
                    " in " + r.path());
  meta.config_digest = r.value<std::uint64_t>();
  meta.dtype = r.value<std::uint8_t>();
  if (meta.dtype != 4 && meta.dtype != 8)
    throw DataError("checkpoint: bad dtype byte in " + r.path());
  meta.has_optimizer = r.value<std::uint8_t>() != 0;
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, Policy& policy, std::uint64_t config_digest,
                     int dtype_bytes, const OptimizerState* opt) {
  if (dtype_bytes != 4 && dtype_bytes != 8)
    throw ConfigError("checkpoint: dtype must be 4 or 8 bytes");
  if (opt && opt->names.size() != opt->velocity.size())
    throw ConfigError("checkpoint: optimizer names/velocities out of step");

  BinWriter w(path);
  w.magic(kMagic);
  w.value<std::uint32_t>(kVersion);
  w.value<std::uint64_t>(config_digest);
  w.value<std::uint8_t>(static_cast<std::uint8_t>(dtype_bytes));
  w.value<std::uint8_t>(opt ? 1 : 0);

  const std::vector<Param*> params = policy.all_params();
  w.value<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) write_mat(w, p->name, p->value, dtype_bytes);

  if (opt) {
    w.value<std::int64_t>(opt->step);
    w.value<std::uint32_t>(static_cast<std::uint32_t>(opt->velocity.size()));
    for (std::size_t i = 0; i < opt->velocity.size(); ++i)
      write_mat(w, opt->names[i], opt->velocity[i], 8);
  }
  w.close();
}

CheckpointMeta load_checkpoint(const std::string& path, Policy& policy,
                               std::uint64_t expect_digest, OptimizerState* opt_out) {
  BinReader r(path);
  const CheckpointMeta meta = read_header(r);
  if (meta.config_digest != expect_digest)
    throw ConfigError("checkpoint: config digest mismatch (file " +
                      hex_digest(meta.config_digest) + ", run " + hex_digest(expect_digest) +
                      ") for " + path);

  const std::vector<Param*> params = policy.all_params();
  const auto count = r.value<std::uint32_t>();
  if (count != params.size())
    throw DataError("checkpoint: " + path + " holds " + std::to_string(count) +
                    " parameters, model has " + std::to_string(params.size()));
  for (Param* p : params) {
    std::string name;
    Mat m = read_mat(r, &name, meta.dtype);
    if (name != p->name)
      throw DataError("checkpoint: parameter order mismatch in " + path + " (file '" + name +
                      "', model '" + p->name + "')");
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw DataError("checkpoint: shape mismatch for '" + name + "' in " + path + " (file " +
                      m.shape_str() + ", model " + p->value.shape_str() + ")");
    p->value = std::move(m);
  }

  if (opt_out) {
    *opt_out = OptimizerState{};
    if (meta.has_optimizer) {
      opt_out->step = r.value<std::int64_t>();
      const auto vn = r.value<std::uint32_t>();
      for (std::uint32_t i = 0; i < vn; ++i) {
        std::string name;
        Mat v = read_mat(r, &name, 8);
        opt_out->names.push_back(std::move(name));
        opt_out->velocity.push_back(std::move(v));
      }
    }
  }
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  BinReader r(path);
  return read_header(r);
}

}  // namespace tandem
