// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/kvfs.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "lipos/fingerprint.hpp"

namespace lipos {

namespace {

bool can_read(const Caller& c, const Permissions& p) { return c.principal == p.owner || p.readable_by_all; }
bool can_write(const Caller& c, const Permissions& p) { return c.principal == p.owner || p.writable_by_all; }

Permissions default_perms(const Caller& c) { return Permissions{c.principal, false, false}; }

}  // namespace

Kvfs::Kvfs(KvfsConfig config) : config_(config) {
    if (config_.page_size == 0) throw Error(Errc::ConfigError, "page_size must be positive");
}

Kvfs::File& Kvfs::file_for(KvHandle handle) {
    return const_cast<File&>(std::as_const(*this).file_for(handle));
}

const Kvfs::File& Kvfs::file_for(KvHandle handle) const {
    auto h = handles_.find(handle.id);
    if (h == handles_.end()) throw Error(Errc::BadHandle, "unknown handle " + std::to_string(handle.id));
    auto f = files_.find(h->second);
    if (f == files_.end()) throw Error(Errc::NotFound, "file was removed");
    return f->second;
}

void Kvfs::require_read(const Caller& caller, const File& f) const {
    if (!can_read(caller, f.perms)) throw Error(Errc::PermissionDenied, "read access to '" + f.name + "'");
}

void Kvfs::require_write(const Caller& caller, const File& f) const {
    if (!can_write(caller, f.perms)) throw Error(Errc::PermissionDenied, "write access to '" + f.name + "'");
    if (f.lock_holder && *f.lock_holder != caller.tid)
        throw Error(Errc::Locked, "held by thread " + std::to_string(*f.lock_holder));
}

void Kvfs::require_capacity(Tier tier, std::size_t pages) const {
    if (pages == 0) return;
    const bool device = tier == Tier::Device;
    const std::size_t used = device ? used_.device : used_.host;
    const std::size_t cap = device ? config_.device_capacity : config_.host_capacity;
    if (used + pages > cap) {
        throw Error(Errc::PoolExhausted, std::string(device ? "device" : "host") + " tier needs " +
                                             std::to_string(pages) + " pages, " +
                                             std::to_string(cap - used) + " free");
    }
}

void Kvfs::require_name_free(std::string_view name) const {
    if (!name.empty() && names_.find(name) != names_.end())
        throw Error(Errc::NameExists, std::string(name));
}

std::size_t Kvfs::pages_for(std::size_t n) const { return (n + config_.page_size - 1) / config_.page_size; }

PageId Kvfs::allocate_page(Tier tier) {
    PageId id;
    if (!free_pages_.empty()) {
        id = free_pages_.back();
        free_pages_.pop_back();
    } else {
        id = static_cast<PageId>(pages_.size());
        pages_.emplace_back();
    }
    Page& p = pages_[id];
    p.entries.clear();
    p.entries.reserve(config_.page_size);
    p.refcount = 1;
    p.tier = tier;
    (tier == Tier::Device ? used_.device : used_.host) += 1;
    return id;
}

void Kvfs::release_page(PageId id) {
    Page& p = pages_[id];
    if (--p.refcount == 0) {
        (p.tier == Tier::Device ? used_.device : used_.host) -= 1;
        p.entries = {};
        free_pages_.push_back(id);
    }
}

FileId Kvfs::new_file(std::string_view name, const Permissions& perms) {
    const FileId id = next_file_++;
    File f;
    f.id = id;
    f.name = std::string(name);
    f.perms = perms;
    files_.emplace(id, std::move(f));
    if (!name.empty()) names_.emplace(std::string(name), id);
    return id;
}

KvHandle Kvfs::new_handle(FileId file) {
    const KvHandle h{next_handle_++};
    handles_.emplace(h.id, file);
    files_.at(file).open_count += 1;
    return h;
}

std::size_t Kvfs::drop_file(FileId id) {
    File& f = files_.at(id);
    std::size_t freed = 0;
    for (PageId p : f.pages) {
        if (pages_[p].refcount == 1) ++freed;
        release_page(p);
    }
    if (!f.name.empty()) names_.erase(f.name);
    files_.erase(id);
    return freed;
}

void Kvfs::fill_pages(File& f, std::span<const KvEntry> entries) {
    std::size_t i = 0;
    if (!f.pages.empty()) {
        Page& tail = pages_[f.pages.back()];
        while (i < entries.size() && tail.entries.size() < config_.page_size) tail.entries.push_back(entries[i++]);
    }
    while (i < entries.size()) {
        const PageId id = allocate_page(Tier::Device);
        Page& p = pages_[id];
        while (i < entries.size() && p.entries.size() < config_.page_size) p.entries.push_back(entries[i++]);
        f.pages.push_back(id);
    }
    f.length += entries.size();
}

std::vector<KvEntry> Kvfs::entries_of(const File& f) const {
    std::vector<KvEntry> out;
    out.reserve(f.length);
    for (PageId p : f.pages) out.insert(out.end(), pages_[p].entries.begin(), pages_[p].entries.end());
    return out;
}

std::vector<KvEntry> Kvfs::rechain(std::vector<KvEntry> entries) const {
    Fingerprint f = config_.chain_seed;
    for (auto& e : entries) {
        f = chain_fingerprint(f, e.token, e.position);
        e.fingerprint = f;
    }
    return entries;
}

void Kvfs::maybe_audit() const {
    if (config_.audit_every_op) audit_locked();
}

KvHandle Kvfs::create(const Caller& caller, std::string_view name, std::optional<Permissions> perms) {
    std::lock_guard lock(mu_);
    require_name_free(name);
    const FileId id = new_file(name, perms.value_or(default_perms(caller)));
    const KvHandle h = new_handle(id);
    maybe_audit();
    return h;
}

KvHandle Kvfs::open(const Caller& caller, std::string_view name) {
    std::lock_guard lock(mu_);
    auto it = names_.find(name);
    if (it == names_.end()) throw Error(Errc::NotFound, std::string(name));
    require_read(caller, files_.at(it->second));
    return new_handle(it->second);
}

void Kvfs::close(KvHandle handle) {
    std::lock_guard lock(mu_);
    auto h = handles_.find(handle.id);
    if (h == handles_.end()) throw Error(Errc::BadHandle, "close of unknown handle");
    const FileId id = h->second;
    handles_.erase(h);
    auto f = files_.find(id);
    if (f == files_.end()) return;
    f->second.open_count -= 1;
    if (f->second.name.empty() && f->second.open_count == 0) drop_file(id);
    maybe_audit();
}

std::size_t Kvfs::remove(const Caller& caller, KvHandle handle) {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    require_write(caller, f);
    const std::size_t freed = drop_file(f.id);
    handles_.erase(handle.id);
    maybe_audit();
    return freed;
}

KvHandle Kvfs::fork(const Caller& caller, KvHandle src, std::string_view name) {
    std::lock_guard lock(mu_);
    const File& s = file_for(src);
    require_read(caller, s);
    require_name_free(name);

    const bool partial_tail = s.length % config_.page_size != 0;
    const bool copy_tail = partial_tail && config_.eager_tail_copy;
    if (copy_tail) require_capacity(pages_[s.pages.back()].tier, 1);

    std::vector<PageId> pages = s.pages;
    const std::size_t length = s.length;
    const FileId id = new_file(name, default_perms(caller));
    File& f = files_.at(id);
    const std::size_t shared = copy_tail ? pages.size() - 1 : pages.size();
    for (std::size_t i = 0; i < shared; ++i) pages_[pages[i]].refcount += 1;
    if (copy_tail) {
        const PageId old = pages.back();
        const PageId fresh = allocate_page(pages_[old].tier);
        pages_[fresh].entries = pages_[old].entries;
        pages.back() = fresh;
    }
    f.pages = std::move(pages);
    f.length = length;
    const KvHandle h = new_handle(id);
    maybe_audit();
    return h;
}

void Kvfs::append(const Caller& caller, KvHandle handle, std::span<const KvEntry> entries) {
    std::lock_guard lock(mu_);
    File& f = file_for(handle);
    require_write(caller, f);
    if (entries.empty()) return;

    std::optional<Position> last;
    if (f.length > 0) last = pages_[f.pages.back()].entries.back().position;
    for (const auto& e : entries) {
        if (last && e.position <= *last) {
            throw Error(Errc::PositionConflict, "position " + std::to_string(e.position) + " after " +
                                                    std::to_string(*last));
        }
        last = e.position;
    }
    for (PageId p : f.pages) {
        if (pages_[p].tier != Tier::Device) throw Error(Errc::NotResident, "file '" + f.name + "' is offloaded");
    }

    const std::size_t room = f.pages.empty() ? 0 : config_.page_size - pages_[f.pages.back()].entries.size();
    const bool split = room > 0 && pages_[f.pages.back()].refcount > 1;
    const std::size_t overflow = entries.size() - std::min(room, entries.size());
    require_capacity(Tier::Device, (split ? 1 : 0) + pages_for(overflow));

    if (split) {
        const PageId old = f.pages.back();
        const PageId fresh = allocate_page(Tier::Device);
        pages_[fresh].entries = pages_[old].entries;
        pages_[old].refcount -= 1;
        f.pages.back() = fresh;
    }
    fill_pages(f, entries);
    maybe_audit();
}

KvHandle Kvfs::extract(const Caller& caller, KvHandle src, std::span<const std::size_t> indices,
                       std::string_view name) {
    std::lock_guard lock(mu_);
    const File& s = file_for(src);
    require_read(caller, s);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= s.length) {
            throw Error(Errc::IndexOutOfRange, "index " + std::to_string(indices[i]) + " of " +
                                                   std::to_string(s.length));
        }
        if (i > 0 && indices[i] <= indices[i - 1]) throw Error(Errc::IndexOutOfRange, "indices not increasing");
    }
    require_name_free(name);
    require_capacity(Tier::Device, pages_for(indices.size()));

    std::vector<KvEntry> selected;
    selected.reserve(indices.size());
    const std::size_t P = config_.page_size;
    for (std::size_t i : indices) selected.push_back(pages_[s.pages[i / P]].entries[i % P]);
    selected = rechain(std::move(selected));

    const FileId id = new_file(name, default_perms(caller));
    fill_pages(files_.at(id), selected);
    const KvHandle h = new_handle(id);
    maybe_audit();
    return h;
}

KvHandle Kvfs::merge(const Caller& caller, std::span<const KvHandle> parts, std::string_view name) {
    std::lock_guard lock(mu_);
    std::vector<KvEntry> all;
    for (KvHandle part : parts) {
        const File& f = file_for(part);
        require_read(caller, f);
        auto e = entries_of(f);
        all.insert(all.end(), e.begin(), e.end());
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const KvEntry& a, const KvEntry& b) { return a.position < b.position; });
    for (std::size_t i = 1; i < all.size(); ++i) {
        if (all[i].position == all[i - 1].position)
            throw Error(Errc::PositionConflict, "parts share position " + std::to_string(all[i].position));
    }
    require_name_free(name);
    require_capacity(Tier::Device, pages_for(all.size()));
    all = rechain(std::move(all));

    const FileId id = new_file(name, default_perms(caller));
    fill_pages(files_.at(id), all);
    const KvHandle h = new_handle(id);
    maybe_audit();
    return h;
}

void Kvfs::lock(const Caller& caller, KvHandle handle) {
    std::lock_guard guard(mu_);
    File& f = file_for(handle);
    if (!can_write(caller, f.perms)) throw Error(Errc::PermissionDenied, "lock of '" + f.name + "'");
    if (f.lock_holder) {
        throw Error(Errc::Locked, *f.lock_holder == caller.tid ? std::string("already held by caller")
                                                               : "held by thread " + std::to_string(*f.lock_holder));
    }
    f.lock_holder = caller.tid;
}

void Kvfs::unlock(const Caller& caller, KvHandle handle) {
    std::lock_guard guard(mu_);
    File& f = file_for(handle);
    if (!f.lock_holder || *f.lock_holder != caller.tid) throw Error(Errc::NotLockHolder);
    f.lock_holder.reset();
}

std::size_t Kvfs::offload(const Caller& caller, KvHandle handle) {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    require_read(caller, f);
    std::size_t movable = 0;
    for (PageId p : f.pages) {
        if (pages_[p].refcount == 1 && pages_[p].tier == Tier::Device) ++movable;
    }
    require_capacity(Tier::Host, movable);
    for (PageId p : f.pages) {
        if (pages_[p].refcount == 1 && pages_[p].tier == Tier::Device) pages_[p].tier = Tier::Host;
    }
    used_.device -= movable;
    used_.host += movable;
    maybe_audit();
    return movable;
}

std::size_t Kvfs::restore(const Caller& caller, KvHandle handle) {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    require_read(caller, f);
    std::size_t movable = 0;
    for (PageId p : f.pages) {
        if (pages_[p].tier == Tier::Host) ++movable;
    }
    require_capacity(Tier::Device, movable);
    for (PageId p : f.pages) pages_[p].tier = Tier::Device;
    used_.host -= movable;
    used_.device += movable;
    maybe_audit();
    return movable;
}

void Kvfs::set_permissions(const Caller& caller, KvHandle handle, Permissions perms) {
    std::lock_guard lock(mu_);
    File& f = file_for(handle);
    if (caller.principal != f.perms.owner) throw Error(Errc::PermissionDenied, "only the owner may chmod");
    f.perms = perms;
}

std::vector<KvEntry> Kvfs::read(const Caller& caller, KvHandle handle) const {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    require_read(caller, f);
    return entries_of(f);
}

std::size_t Kvfs::length(KvHandle handle) const {
    std::lock_guard lock(mu_);
    return file_for(handle).length;
}

Fingerprint Kvfs::tail_fingerprint(const Caller& caller, KvHandle handle) const {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    require_read(caller, f);
    if (f.length == 0) return config_.chain_seed;
    return pages_[f.pages.back()].entries.back().fingerprint;
}

std::optional<Position> Kvfs::last_position(KvHandle handle) const {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    if (f.length == 0) return std::nullopt;
    return pages_[f.pages.back()].entries.back().position;
}

KvFileInfo Kvfs::stat(KvHandle handle) const {
    std::lock_guard lock(mu_);
    const File& f = file_for(handle);
    KvFileInfo info;
    info.id = f.id;
    info.name = f.name;
    info.length = f.length;
    info.pages = f.pages.size();
    for (PageId p : f.pages) (pages_[p].tier == Tier::Device ? info.device_pages : info.host_pages) += 1;
    info.perms = f.perms;
    info.lock_holder = f.lock_holder;
    return info;
}

FileId Kvfs::file_id(KvHandle handle) const {
    std::lock_guard lock(mu_);
    return file_for(handle).id;
}

bool Kvfs::exists(std::string_view name) const {
    std::lock_guard lock(mu_);
    return names_.find(name) != names_.end();
}

std::vector<std::string> Kvfs::names() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [name, id] : names_) out.push_back(name);
    return out;
}

std::size_t Kvfs::file_count() const {
    std::lock_guard lock(mu_);
    return files_.size();
}

std::size_t Kvfs::open_handle_count() const {
    std::lock_guard lock(mu_);
    return handles_.size();
}

std::vector<PageId> Kvfs::page_ids(KvHandle handle) const {
    std::lock_guard lock(mu_);
    return file_for(handle).pages;
}

std::size_t Kvfs::refcount(PageId page) const {
    std::lock_guard lock(mu_);
    return page < pages_.size() ? pages_[page].refcount : 0;
}

PoolUsage Kvfs::usage() const {
    std::lock_guard lock(mu_);
    return used_;
}

std::size_t Kvfs::free_device_pages() const {
    std::lock_guard lock(mu_);
    return config_.device_capacity - used_.device;
}

void Kvfs::audit() const {
    std::lock_guard lock(mu_);
    audit_locked();
}

void Kvfs::audit_locked() const {
    auto fail = [](const std::string& what) { throw std::logic_error("kvfs audit: " + what); };

    std::vector<std::uint32_t> refs(pages_.size(), 0);
    for (const auto& [id, f] : files_) {
        std::size_t total = 0;
        Fingerprint chain = config_.chain_seed;
        std::optional<Position> last;
        for (std::size_t i = 0; i < f.pages.size(); ++i) {
            const PageId p = f.pages[i];
            if (p >= pages_.size()) fail("file " + std::to_string(id) + " references unknown page");
            refs[p] += 1;
            const Page& page = pages_[p];
            if (page.entries.empty()) fail("file " + std::to_string(id) + " holds an empty page");
            if (i + 1 < f.pages.size() && page.entries.size() != config_.page_size)
                fail("file " + std::to_string(id) + " has a partial interior page");
            for (const auto& e : page.entries) {
                if (last && e.position <= *last) fail("file " + std::to_string(id) + " positions not increasing");
                last = e.position;
                chain = chain_fingerprint(chain, e.token, e.position);
                if (e.fingerprint != chain) fail("file " + std::to_string(id) + " fingerprint chain broken");
            }
            total += page.entries.size();
        }
        if (total != f.length) fail("file " + std::to_string(id) + " length mismatch");
    }

    PoolUsage live;
    for (std::size_t p = 0; p < pages_.size(); ++p) {
        if (refs[p] != pages_[p].refcount) {
            fail("page " + std::to_string(p) + " refcount " + std::to_string(pages_[p].refcount) +
                 " but referenced by " + std::to_string(refs[p]) + " files");
        }
        if (refs[p] > 0) (pages_[p].tier == Tier::Device ? live.device : live.host) += 1;
    }
    if (!(live == used_)) fail("pool counters disagree with live pages");
    if (used_.device > config_.device_capacity) fail("device tier over capacity");
    if (used_.host > config_.host_capacity) fail("host tier over capacity");
    if (live.device + live.host + free_pages_.size() != pages_.size()) fail("free list inconsistent");
}

}  // namespace lipos
