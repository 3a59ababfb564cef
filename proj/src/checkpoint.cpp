#include "deblur/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "deblur/errors.hpp"

namespace deblur {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
    s.push_back(char((v >> 16) & 0xff));
    s.push_back(char((v >> 24) & 0xff));
}

struct Cursor {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > size) throw IoError("truncated checkpoint: " + path);
    }
    std::uint32_t u32() {
        need(4);
        const std::uint32_t v = std::uint32_t(p[pos]) | (std::uint32_t(p[pos + 1]) << 8) |
                                (std::uint32_t(p[pos + 2]) << 16) |
                                (std::uint32_t(p[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
    bool done() const { return pos == size; }
};

} // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
    if (find(name)) throw UsageError("checkpoint: duplicate record name '" + name + "'");
    records.push_back({name, std::move(t)});
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r.tensor;
    return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    for (const auto& r : records)
        if (r.name.rfind(prefix, 0) == 0) return true;
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string buf = "DBLF";
    put_u32(buf, kVersion);
    put_u32(buf, std::uint32_t(ck.config_text.size()));
    buf += ck.config_text;
    for (const auto& r : ck.records) {
        put_u32(buf, std::uint32_t(r.name.size()));
        buf += r.name;
        put_u32(buf, std::uint32_t(r.tensor.ndim()));
        for (int d : r.tensor.shape) put_u32(buf, std::uint32_t(d));
        for (float v : r.tensor.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(buf, bits);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "DBLF") != 0)
        throw IoError("not a DBLF checkpoint: " + path);
    Cursor c{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), 4, path};
    const std::uint32_t version = c.u32();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                      path);
    Checkpoint ck;
    ck.config_text = c.bytes(c.u32());
    std::set<std::string> seen;
    while (!c.done()) {
        const std::string name = c.bytes(c.u32());
        if (!seen.insert(name).second)
            throw IoError("duplicate record '" + name + "' in " + path);
        const std::uint32_t rank = c.u32();
        if (rank > 8) throw IoError("implausible tensor rank in " + path);
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = int(c.u32());
            numel *= std::size_t(d);
        }
        Tensor t(shape);
        for (std::size_t i = 0; i < numel; ++i) {
            const std::uint32_t bits = c.u32();
            std::memcpy(&t.data[i], &bits, 4);
        }
        ck.records.push_back({name, std::move(t)});
    }
    return ck;
}

void add_net_params(Checkpoint& ck, const std::string& prefix, const ParamSet<float>& set) {
    for (const auto& p : set.params) ck.add(prefix + p.name, p.value);
}

void load_net_params(const Checkpoint& ck, const std::string& prefix, ParamSet<float>& set) {
    std::size_t used = 0;
    for (auto& p : set.params) {
        const Tensor* t = ck.find(prefix + p.name);
        if (!t) throw IoError("checkpoint missing parameter '" + prefix + p.name + "'");
        if (t->shape != p.value.shape)
            throw IoError("checkpoint parameter '" + prefix + p.name + "' has shape " +
                          t->shape_str() + ", expected " + p.value.shape_str());
        p.value = *t;
        ++used;
    }
    std::size_t present = 0;
    for (const auto& r : ck.records)
        if (r.name.rfind(prefix, 0) == 0) ++present;
    if (present != used)
        throw IoError("checkpoint holds " + std::to_string(present) + " records under '" +
                      prefix + "' but the network expects " + std::to_string(used));
}

} // namespace deblur
