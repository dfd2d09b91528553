#pragma once

// Content-addressed on-disk cache of ScoredText, one JSON file per
// (scorer model_id, SHA-256 of text). Files are written to a temporary name
// and renamed into place, so a reader never sees a partial entry.

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "toblend/backend.hpp"
#include "toblend/rng.hpp"
#include "toblend/sha256.hpp"
#include "toblend/wire.hpp"

namespace toblend {

class ScoreCache {
public:
    struct Stats {
        std::uint64_t hits = 0;
        std::uint64_t misses = 0;
        std::uint64_t invalidated = 0;
    };

    using WarningSink = std::function<void(const std::string&)>;

    explicit ScoreCache(std::filesystem::path dir)
        : dir_(std::move(dir)), warn_([](const std::string& m) { std::cerr << "warning: " << m << '\n'; }) {
        std::filesystem::create_directories(dir_);
    }

    void set_warning_sink(WarningSink sink) { warn_ = std::move(sink); }

    static std::string key(std::string_view model_id, std::string_view text) {
        std::string material(model_id);
        material.push_back('\0');
        material += sha256_hex(text);
        return sha256_hex(material);
    }

    std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

    /// Returns the cached score for (backend model_id, text), calling the
    /// backend at most once per key.
    ScoredText get_or_score(const Backend& backend, std::string_view text) {
        const auto model_id = backend.describe().model_id;
        const auto k = key(model_id, text);
        std::lock_guard lock(stripes_[fnv1a64(k) % stripes_.size()]);

        if (auto cached = read(k, model_id, text)) {
            ++hits_;
            return std::move(*cached);
        }
        ++misses_;
        auto fresh = toblend::score(backend, ScoreRequest{std::string(text)});
        write(k, model_id, text, fresh);
        return fresh;
    }

    Stats stats() const { return {hits_.load(), misses_.load(), invalidated_.load()}; }

private:
    std::optional<ScoredText> read(const std::string& k, const std::string& model_id,
                                   std::string_view text) {
        const auto path = path_for(k);
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        in.close();
        try {
            auto j = json::parse(ss.str());
            if (wire::field<std::string>(j, "model_id") != model_id ||
                wire::field<std::string>(j, "text_sha256") != sha256_hex(text))
                throw ProtocolError("key mismatch");
            auto st = wire::field<ScoredText>(j, "scored");
            if (st.text != text) throw ProtocolError("text mismatch");
            for (const auto& t : st.tokens) {
                if (auto why = check_token_stat(t, 0, 1e-6); !why.empty()) throw ProtocolError(why);
            }
            return st;
        } catch (const std::exception& e) {
            ++invalidated_;
            warn_("score cache entry " + path.string() + " is corrupt (" + e.what() +
                  "); refetching");
            std::error_code ec;
            std::filesystem::remove(path, ec);
            return std::nullopt;
        }
    }

    void write(const std::string& k, const std::string& model_id, std::string_view text,
               const ScoredText& st) {
        json j{{"model_id", model_id}, {"text_sha256", sha256_hex(text)}, {"scored", st}};
        thread_local std::mt19937_64 tmp_rng{std::random_device{}()};
        const auto final_path = path_for(k);
        auto tmp = final_path;
        tmp += ".tmp." + std::to_string(tmp_rng());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << j.dump();
            if (!out) {
                warn_("cannot write score cache entry " + tmp.string());
                return;
            }
        }
        std::error_code ec;
        std::filesystem::rename(tmp, final_path, ec);
        if (ec) {
            std::filesystem::remove(tmp, ec);
            warn_("cannot install score cache entry " + final_path.string());
        }
    }

    std::filesystem::path dir_;
    WarningSink warn_;
    std::array<std::mutex, 64> stripes_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> invalidated_{0};
};

inline ScoredText cached_score(ScoreCache& cache, const Backend& backend, std::string_view text) {
    return cache.get_or_score(backend, text);
}

}  // namespace toblend
