// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout:
//   manifest.json   {"<name>": {"id": N, "length": N, "perms": {...}}, ...}
//   <id>.kvf        "KVF1", u32 count, then count x (u32 token, u32 position, u64 fingerprint)
// All integers little-endian. Residency and locks are not persisted.

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "lipos/fingerprint.hpp"
#include "lipos/kvfs.hpp"

namespace lipos {

namespace {

constexpr std::array<char, 4> kMagic{'K', 'V', 'F', '1'};

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& off) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    off += sizeof(T);
    return v;
}

std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(Errc::CorruptSnapshot, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void Kvfs::save_snapshot(const std::filesystem::path& dir) const {
    std::lock_guard lock(mu_);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
    for (const auto& [name, id] : names_) {
        const File& f = files_.at(id);
        manifest[name] = {{"id", f.id},
                          {"length", f.length},
                          {"perms",
                           {{"owner", f.perms.owner},
                            {"readable_by_all", f.perms.readable_by_all},
                            {"writable_by_all", f.perms.writable_by_all}}}};

        std::string blob(kMagic.begin(), kMagic.end());
        put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(f.length));
        for (const auto& e : entries_of(f)) {
            put_le<std::uint32_t>(blob, e.token);
            put_le<std::uint32_t>(blob, e.position);
            put_le<std::uint64_t>(blob, e.fingerprint);
        }
        std::ofstream out(dir / (std::to_string(f.id) + ".kvf"), std::ios::binary | std::ios::trunc);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw std::runtime_error("failed writing snapshot file for '" + name + "'");
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest in " + dir.string());
}

void Kvfs::load_snapshot(const std::filesystem::path& dir) {
    std::lock_guard lock(mu_);
    if (!files_.empty()) throw std::logic_error("load_snapshot requires an empty file system");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_all(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::CorruptSnapshot, std::string("manifest: ") + e.what());
    }
    if (!manifest.is_object()) throw Error(Errc::CorruptSnapshot, "manifest is not an object");

    struct Loaded {
        std::string name;
        FileId id;
        Permissions perms;
        std::vector<KvEntry> entries;
    };
    std::vector<Loaded> loaded;
    std::size_t pages_needed = 0;
    for (const auto& [name, meta] : manifest.items()) {
        Loaded l;
        l.name = name;
        std::size_t length = 0;
        try {
            l.id = meta.at("id").get<FileId>();
            length = meta.at("length").get<std::size_t>();
            const auto& p = meta.at("perms");
            l.perms = {p.at("owner").get<Principal>(), p.at("readable_by_all").get<bool>(),
                       p.at("writable_by_all").get<bool>()};
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::CorruptSnapshot, "manifest entry '" + name + "': " + e.what());
        }
        if (name.empty()) throw Error(Errc::CorruptSnapshot, "empty file name");

        const std::string blob = read_all(dir / (std::to_string(l.id) + ".kvf"));
        if (blob.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), blob.begin()))
            throw Error(Errc::CorruptSnapshot, "bad magic in file '" + name + "'");
        std::size_t off = 4;
        const auto count = get_le<std::uint32_t>(blob, off);
        if (count != length || blob.size() != 8 + 16 * static_cast<std::size_t>(count))
            throw Error(Errc::CorruptSnapshot, "length mismatch in file '" + name + "'");

        Fingerprint chain = config_.chain_seed;
        for (std::uint32_t i = 0; i < count; ++i) {
            KvEntry e;
            e.token = get_le<std::uint32_t>(blob, off);
            e.position = get_le<std::uint32_t>(blob, off);
            e.fingerprint = get_le<std::uint64_t>(blob, off);
            if (!l.entries.empty() && e.position <= l.entries.back().position)
                throw Error(Errc::CorruptSnapshot, "positions not increasing in '" + name + "'");
            chain = chain_fingerprint(chain, e.token, e.position);
            if (chain != e.fingerprint) throw Error(Errc::CorruptSnapshot, "fingerprint chain broken in '" + name + "'");
            l.entries.push_back(e);
        }
        for (const auto& other : loaded) {
            if (other.id == l.id) throw Error(Errc::CorruptSnapshot, "duplicate file id " + std::to_string(l.id));
        }
        pages_needed += pages_for(l.entries.size());
        loaded.push_back(std::move(l));
    }
    require_capacity(Tier::Device, pages_needed);

    for (auto& l : loaded) {
        File f;
        f.id = l.id;
        f.name = l.name;
        f.perms = l.perms;
        auto it = files_.emplace(l.id, std::move(f)).first;
        names_.emplace(l.name, l.id);
        fill_pages(it->second, l.entries);
        next_file_ = std::max(next_file_, l.id + 1);
    }
    maybe_audit();
}

}  // namespace lipos
