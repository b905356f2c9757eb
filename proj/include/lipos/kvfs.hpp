// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lipos/common.hpp"

namespace lipos {

/// One cached token. `fingerprint` stands in for the K/V tensors and always
/// equals the chain digest of the file's entries up to and including this one.
struct KvEntry {
    TokenId token = 0;
    Position position = 0;
    Fingerprint fingerprint = 0;

    friend bool operator==(const KvEntry&, const KvEntry&) = default;
};

enum class Tier : std::uint8_t { Device, Host };

struct Permissions {
    Principal owner = 0;
    bool readable_by_all = true;
    bool writable_by_all = false;

    friend bool operator==(const Permissions&, const Permissions&) = default;
};

/// Identity of whoever issues a kvfs operation: the principal is checked
/// against permissions, the thread id against locks.
struct Caller {
    Principal principal = 0;
    Tid tid = 0;
};

struct KvHandle {
    std::uint64_t id = 0;

    explicit operator bool() const noexcept { return id != 0; }
    friend bool operator==(const KvHandle&, const KvHandle&) = default;
    friend auto operator<=>(const KvHandle&, const KvHandle&) = default;
};

using FileId = std::uint64_t;
using PageId = std::uint32_t;

struct KvfsConfig {
    std::size_t page_size = 16;
    std::size_t device_capacity = 65536;  // pages
    std::size_t host_capacity = 262144;   // pages
    /// When false, fork shares the partially filled tail page as well and the
    /// first append to either file splits it.
    bool eager_tail_copy = true;
    /// Run the full consistency audit after every mutating operation.
    bool audit_every_op = false;
    /// Chain start for fingerprints; must match the model seed.
    Fingerprint chain_seed = 0;
};

struct PoolUsage {
    std::size_t device = 0;
    std::size_t host = 0;

    friend bool operator==(const PoolUsage&, const PoolUsage&) = default;
};

struct KvFileInfo {
    FileId id = 0;
    std::string name;  // empty for anonymous files
    std::size_t length = 0;
    std::size_t pages = 0;
    std::size_t device_pages = 0;
    std::size_t host_pages = 0;
    Permissions perms;
    std::optional<Tid> lock_holder;
};

/// Paged, copy-on-write KV-cache file system.
///
/// Files are ordered lists of refcounted pages drawn from a two-tier pool.
/// Named files persist until removed; anonymous files (empty name) are freed
/// when their last handle closes. Every operation is linearizable and either
/// succeeds or throws `Error` without changing any file or pool counter.
class Kvfs {
public:
    explicit Kvfs(KvfsConfig config = {});

    Kvfs(const Kvfs&) = delete;
    Kvfs& operator=(const Kvfs&) = delete;

    const KvfsConfig& config() const noexcept { return config_; }

    KvHandle create(const Caller& caller, std::string_view name, std::optional<Permissions> perms = {});
    KvHandle open(const Caller& caller, std::string_view name);
    void close(KvHandle handle);
    /// Unlinks the file and drops its page references. Returns pages freed.
    std::size_t remove(const Caller& caller, KvHandle handle);

    KvHandle fork(const Caller& caller, KvHandle src, std::string_view name = {});
    void append(const Caller& caller, KvHandle handle, std::span<const KvEntry> entries);
    KvHandle extract(const Caller& caller, KvHandle src, std::span<const std::size_t> indices,
                     std::string_view name = {});
    KvHandle merge(const Caller& caller, std::span<const KvHandle> parts, std::string_view name = {});

    void lock(const Caller& caller, KvHandle handle);
    void unlock(const Caller& caller, KvHandle handle);

    /// Moves exclusively owned device pages to the host tier. Returns pages moved.
    std::size_t offload(const Caller& caller, KvHandle handle);
    /// Moves the file's host pages back to the device tier. Returns pages moved.
    std::size_t restore(const Caller& caller, KvHandle handle);

    void set_permissions(const Caller& caller, KvHandle handle, Permissions perms);

    std::vector<KvEntry> read(const Caller& caller, KvHandle handle) const;
    std::size_t length(KvHandle handle) const;
    /// Digest of the last entry, or the chain seed for an empty file.
    Fingerprint tail_fingerprint(const Caller& caller, KvHandle handle) const;
    std::optional<Position> last_position(KvHandle handle) const;
    KvFileInfo stat(KvHandle handle) const;
    FileId file_id(KvHandle handle) const;
    bool exists(std::string_view name) const;
    std::vector<std::string> names() const;
    std::size_t file_count() const;
    std::size_t open_handle_count() const;

    std::vector<PageId> page_ids(KvHandle handle) const;
    std::size_t refcount(PageId page) const;
    PoolUsage usage() const;
    std::size_t free_device_pages() const;

    /// Checks refcount conservation, capacity, page fill, position order and
    /// fingerprint chains. Throws std::logic_error on the first violation.
    void audit() const;

    /// Writes named files as `manifest.json` plus one `<id>.kvf` per file.
    void save_snapshot(const std::filesystem::path& dir) const;
    /// Loads a snapshot into this (empty) file system.
    void load_snapshot(const std::filesystem::path& dir);

private:
    struct Page {
        std::vector<KvEntry> entries;
        std::uint32_t refcount = 0;
        Tier tier = Tier::Device;
    };

    struct File {
        FileId id = 0;
        std::string name;
        std::vector<PageId> pages;
        std::size_t length = 0;
        Permissions perms;
        std::optional<Tid> lock_holder;
        std::size_t open_count = 0;
    };

    File& file_for(KvHandle handle);
    const File& file_for(KvHandle handle) const;
    void require_read(const Caller& caller, const File& f) const;
    void require_write(const Caller& caller, const File& f) const;
    void require_capacity(Tier tier, std::size_t pages) const;
    void require_name_free(std::string_view name) const;

    PageId allocate_page(Tier tier);
    void release_page(PageId id);
    FileId new_file(std::string_view name, const Permissions& perms);
    KvHandle new_handle(FileId file);
    std::size_t drop_file(FileId file);
    void fill_pages(File& f, std::span<const KvEntry> entries);
    std::vector<KvEntry> entries_of(const File& f) const;
    std::vector<KvEntry> rechain(std::vector<KvEntry> entries) const;
    std::size_t pages_for(std::size_t n) const;
    void audit_locked() const;
    void maybe_audit() const;

    KvfsConfig config_;
    mutable std::mutex mu_;
    std::vector<Page> pages_;
    std::vector<PageId> free_pages_;
    PoolUsage used_;
    std::unordered_map<FileId, File> files_;
    std::map<std::string, FileId, std::less<>> names_;
    std::unordered_map<std::uint64_t, FileId> handles_;
    FileId next_file_ = 1;
    std::uint64_t next_handle_ = 1;
};

}  // namespace lipos
