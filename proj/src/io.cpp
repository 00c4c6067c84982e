#include "stap/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

namespace stap {

std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("fnv1a_file: cannot open " + path);
    std::uint64_t h = 14695981039346656037ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::uint64_t fnv1a_tensor(const Tensor& t) {
    return fnv1a(t.v.data(), t.v.size() * sizeof(double));
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cells;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& header,
                     std::uint64_t seed)
    : out_(path), path_(path) {
    if (!out_) throw DataError("CsvWriter: cannot open " + path);
    out_ << "# seed=" << seed << "\n" << header << "\n";
    cols_ = split_csv_line(header).size();
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != cols_)
        throw DataError("CsvWriter: column count mismatch in " + path_);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        out_ << cells[i];
    }
    out_ << "\n";
}

void CsvWriter::close() {
    out_.close();
    if (out_.fail()) throw DataError("CsvWriter: write failure on " + path_);
}

// --------------------------------------------------------------------------
// Binary dumps
// --------------------------------------------------------------------------

namespace {

void put_u64(std::ostream& out, std::uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("binary read: truncated u64");
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
}

void put_f64(std::ostream& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u64(out, t.rank());
    for (std::size_t d : t.shape) put_u64(out, d);
    for (double x : t.v) put_f64(out, x);
}

Tensor get_tensor(std::istream& in) {
    const std::size_t rank = get_u64(in);
    if (rank > 8) throw DataError("binary read: implausible tensor rank");
    std::vector<std::size_t> shape(rank);
    for (std::size_t& d : shape) d = get_u64(in);
    Tensor t(shape);
    for (double& x : t.v) x = get_f64(in);
    return t;
}

void put_magic(std::ostream& out, const char* magic) { out.write(magic, 7); }

void check_magic(std::istream& in, const char* magic, const std::string& path) {
    char buf[8] = {};
    in.read(buf, 7);
    if (!in || std::strncmp(buf, magic, 7) != 0)
        throw DataError("bad magic in " + path + " (want " + magic + ")");
}

}  // namespace

void save_bank(const std::string& path, const MemoryBank& bank) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_bank: cannot open " + path);
    put_magic(out, "STAPMB1");
    put_u64(out, bank.p_count);
    put_u64(out, bank.c_count);
    put_u64(out, bank.d_m);
    for (double x : bank.m.value.v) put_f64(out, x);
    for (double x : bank.mu.v) put_f64(out, x);
    put_f64(out, bank.tau);
    put_f64(out, bank.tau_min);
    put_f64(out, bank.tau_max);
    out.close();
    if (out.fail()) throw DataError("save_bank: write failure on " + path);
}

MemoryBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_bank: cannot open " + path);
    check_magic(in, "STAPMB1", path);
    MemoryBank bank;
    bank.p_count = get_u64(in);
    bank.c_count = get_u64(in);
    bank.d_m = get_u64(in);
    bank.m = Param{"bank.m", Tensor({bank.p_count * bank.c_count, bank.d_m})};
    for (double& x : bank.m.value.v) x = get_f64(in);
    bank.mu = Tensor({bank.p_count * bank.c_count});
    for (double& x : bank.mu.v) x = get_f64(in);
    bank.tau = get_f64(in);
    bank.tau_min = get_f64(in);
    bank.tau_max = get_f64(in);
    return bank;
}

void save_checkpoint(const std::string& path, StapModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    put_magic(out, "STAPCK1");
    const std::vector<Param*> params = model.all_params();
    put_u64(out, params.size());
    for (const Param* p : params) {
        put_u64(out, p->name.size());
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put_tensor(out, p->value);
    }
    put_u64(out, model.bank.p_count);
    put_u64(out, model.bank.c_count);
    put_u64(out, model.bank.d_m);
    for (double x : model.bank.mu.v) put_f64(out, x);
    put_f64(out, model.bank.tau);
    put_f64(out, model.bank.tau_min);
    put_f64(out, model.bank.tau_max);
    put_u64(out, model.bank_ready ? 1 : 0);
    out.close();
    if (out.fail()) throw DataError("save_checkpoint: write failure on " + path);
}

void load_checkpoint(const std::string& path, StapModel& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    check_magic(in, "STAPCK1", path);
    const std::vector<Param*> params = model.all_params();
    const std::size_t count = get_u64(in);
    if (count != params.size())
        throw DataError("load_checkpoint: parameter count mismatch in " + path);
    for (Param* p : params) {
        const std::size_t len = get_u64(in);
        std::string name(len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(len));
        if (!in || name != p->name)
            throw DataError("load_checkpoint: expected param " + p->name + ", got " +
                            name);
        Tensor value = get_tensor(in);
        if (!value.same_shape(p->value))
            throw DataError("load_checkpoint: shape mismatch for " + p->name);
        p->value = std::move(value);
    }
    const std::size_t pc = get_u64(in);
    const std::size_t cc = get_u64(in);
    const std::size_t dm = get_u64(in);
    if (pc != model.bank.p_count || cc != model.bank.c_count || dm != model.bank.d_m)
        throw DataError("load_checkpoint: bank geometry mismatch in " + path);
    for (double& x : model.bank.mu.v) x = get_f64(in);
    model.bank.tau = get_f64(in);
    model.bank.tau_min = get_f64(in);
    model.bank.tau_max = get_f64(in);
    model.bank_ready = get_u64(in) != 0;
}

void write_manifest(const std::string& out_dir,
                    const std::map<std::string, std::string>& config_echo,
                    std::uint64_t seed, const std::vector<std::string>& artifact_files,
                    const std::vector<std::string>& volatile_files) {
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["config"] = config_echo;
    nlohmann::json artifacts = nlohmann::json::object();
    for (const std::string& name : artifact_files) {
        char hex[32];
        std::snprintf(hex, sizeof hex, "fnv1a:%016llx",
                      static_cast<unsigned long long>(
                          fnv1a_file((std::filesystem::path(out_dir) / name).string())));
        artifacts[name] = hex;
    }
    for (const std::string& name : volatile_files)
        artifacts[name] = "volatile:wall-clock";
    manifest["artifacts"] = artifacts;
    std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
    if (!out) throw DataError("write_manifest: cannot open manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
    out.close();
    if (out.fail()) throw DataError("write_manifest: write failure in " + out_dir);
}

}  // namespace stap
