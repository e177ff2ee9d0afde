#include "mvpower/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include "mvpower/error.hpp"
#include "mvpower/serialize.hpp"

namespace mvpower {

std::string_view kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::parse: return "parse error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::io: return "I/O error";
    }
    return "error";
}

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw io_error("sha256: digest initialisation failed");
        }
    }
    void update(const char* data, std::size_t size) { EVP_DigestUpdate(ctx_.get(), data, size); }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xF]);
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path.string() + "' for hashing");
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) throw io_error("read of '" + path.string() + "' failed");
    return h.hex();
}

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
    inputs[role] = path.string();
    digests[role] = sha256_file(path);
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [role, path] : inputs) {
        files[role] = {{"path", path}, {"sha256", digests.at(role)}};
    }
    return {{"schema", kManifestSchema},
            {"command", command},
            {"config", config},
            {"inputs", std::move(files)},
            {"seed", seed},
            {"tool_version", kToolVersion},
            {"started", started},
            {"finished", finished},
            {"timings", timings}};
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest) {
    write_text_file(out_dir / kManifestFile, manifest.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& out_dir) {
    const auto path = out_dir / kManifestFile;
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path.string() + "'");
    try {
        const auto doc = nlohmann::json::parse(in);
        if (doc.at("schema").get<std::string>() != kManifestSchema) {
            throw validation_error("unsupported manifest schema in '" + path.string() + "'");
        }
        RunManifest m;
        m.command = doc.at("command").get<std::string>();
        m.config = doc.at("config").get<std::map<std::string, std::string>>();
        for (const auto& [role, entry] : doc.at("inputs").items()) {
            m.inputs[role] = entry.at("path").get<std::string>();
            m.digests[role] = entry.at("sha256").get<std::string>();
        }
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.started = doc.at("started").get<std::string>();
        m.finished = doc.at("finished").get<std::string>();
        if (doc.contains("timings")) m.timings = doc.at("timings").get<std::map<std::string, double>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("manifest '" + path.string() + "': " + e.what());
    }
}

std::map<std::string, std::string> verify_manifest(const RunManifest& manifest) {
    std::map<std::string, std::string> mismatched;
    for (const auto& [role, path] : manifest.inputs) {
        std::string actual;
        try {
            actual = sha256_file(path);
        } catch (const Error&) {
            actual = "missing";
        }
        if (actual != manifest.digests.at(role)) mismatched[role] = actual;
    }
    return mismatched;
}

}  // namespace mvpower
