#include "guillotine/guests/isa.hpp"

#include <algorithm>
#include <stdexcept>

namespace guillotine::guests {
namespace {

constexpr std::array<std::string_view, kOpCount> kOpNames = {
    "LOAD",  "STORE",      "PORT_WRITE", "MAP_PAGE", "WRITE_CODE", "COVERT_SET",
    "COVERT_GET", "RAISE_IRQ", "SPIN", "JUMP",     "HALT"};

Json region_json(std::uint8_t r) {
  if (r < 3) return machine::to_string(static_cast<machine::RegionKind>(r));
  return r;
}

std::uint8_t region_from_json(const Json& j) {
  if (j.is_string()) {
    auto k = machine::region_kind_from_string(j.get<std::string>());
    if (!k) throw std::invalid_argument("unknown region '" + j.get<std::string>() + "'");
    return static_cast<std::uint8_t>(*k);
  }
  return j.get<std::uint8_t>();
}

bool printable(const crypto::Bytes& b) {
  return std::all_of(b.begin(), b.end(), [](std::uint8_t c) { return c >= 0x20 && c < 0x7f; });
}

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return j.at(key).get<T>();
}

Json instr_json(const Instr& in) {
  Json j{{"op", std::string(to_string(in.op))}};
  switch (in.op) {
    case Op::LOAD: j["region"] = region_json(in.r); j["addr"] = in.b; break;
    case Op::STORE:
      j["region"] = region_json(in.r); j["addr"] = in.b; j["value"] = in.a; break;
    case Op::PORT_WRITE: j["slot"] = in.r; j["addr"] = in.b; j["len"] = in.a; break;
    case Op::MAP_PAGE: j["page"] = in.b; j["perms"] = machine::to_string(in.perms()); break;
    case Op::WRITE_CODE: j["addr"] = in.b; j["value"] = in.a; break;
    case Op::COVERT_SET: j["value"] = in.b; break;
    case Op::SPIN: j["n"] = in.b; break;
    case Op::JUMP: j["target"] = in.b; break;
    case Op::COVERT_GET:
    case Op::RAISE_IRQ:
    case Op::HALT: break;
  }
  return j;
}

Instr instr_from_json(const Json& j) {
  auto op = op_from_string(field<std::string>(j, "op"));
  if (!op) throw std::invalid_argument("unknown op '" + j.at("op").get<std::string>() + "'");
  switch (*op) {
    case Op::LOAD:
      return {Op::LOAD, region_from_json(j.at("region")), 0, field<std::uint64_t>(j, "addr")};
    case Op::STORE:
      return {Op::STORE, region_from_json(j.at("region")), field<std::uint8_t>(j, "value"),
              field<std::uint64_t>(j, "addr")};
    case Op::PORT_WRITE:
      return Instr::port_write(field<std::uint8_t>(j, "slot"), field<std::uint64_t>(j, "addr"),
                               field<std::uint32_t>(j, "len"));
    case Op::MAP_PAGE: {
      auto p = machine::permissions_from_string(field<std::string>(j, "perms"));
      if (!p) throw std::invalid_argument("bad perms");
      return Instr::map_page(field<std::uint64_t>(j, "page"), *p);
    }
    case Op::WRITE_CODE:
      return Instr::write_code(field<std::uint64_t>(j, "addr"), field<std::uint8_t>(j, "value"));
    case Op::COVERT_SET: return Instr::covert_set(field<Word>(j, "value"));
    case Op::COVERT_GET: return Instr::covert_get();
    case Op::RAISE_IRQ: return Instr::raise_irq();
    case Op::SPIN: return Instr::spin(field<std::uint64_t>(j, "n"));
    case Op::JUMP: return Instr::jump(field<std::uint64_t>(j, "target"));
    case Op::HALT: return Instr::halt();
  }
  throw std::invalid_argument("unreachable op");
}

}  // namespace

std::string to_string(Op op) {
  auto i = static_cast<std::size_t>(op);
  if (i == 0 || i > kOpCount) return "ILLEGAL";
  return std::string(kOpNames[i - 1]);
}

std::optional<Op> op_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == s) return static_cast<Op>(i + 1);
  }
  return std::nullopt;
}

Instr Instr::map_page(std::uint64_t page, machine::Permissions p) {
  std::uint8_t bits = (p.readable ? 1 : 0) | (p.writable ? 2 : 0) | (p.executable ? 4 : 0);
  return {Op::MAP_PAGE, bits, 0, page};
}

std::array<std::uint8_t, kInstrSize> encode(const Instr& in) {
  std::array<std::uint8_t, kInstrSize> out{};
  out[0] = static_cast<std::uint8_t>(in.op);
  out[1] = in.r;
  for (int i = 0; i < 4; ++i) out[4 + i] = static_cast<std::uint8_t>(in.a >> (8 * i));
  for (int i = 0; i < 8; ++i) out[8 + i] = static_cast<std::uint8_t>(in.b >> (8 * i));
  return out;
}

std::optional<Instr> decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kInstrSize) return std::nullopt;
  if (bytes[0] == 0 || bytes[0] > kOpCount || bytes[2] != 0 || bytes[3] != 0) return std::nullopt;
  Instr in;
  in.op = static_cast<Op>(bytes[0]);
  in.r = bytes[1];
  for (int i = 0; i < 4; ++i) in.a |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  for (int i = 0; i < 8; ++i) in.b |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  return in;
}

crypto::Bytes GuestProgram::code_image() const {
  crypto::Bytes image(exec_region.bound - exec_region.base, 0);
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    auto enc = encode(instructions[i]);
    std::copy(enc.begin(), enc.end(), image.begin() + static_cast<std::ptrdiff_t>(i * kInstrSize));
  }
  return image;
}

std::optional<std::string> validate(const GuestProgram& p, Address model_dram_size) {
  const auto& ex = p.exec_region;
  if (ex.base % machine::kPageSize != 0 || ex.bound % machine::kPageSize != 0) {
    return "exec region is not page aligned";
  }
  if (ex.bound <= ex.base) return "exec region is empty";
  if (ex.bound > model_dram_size) return "exec region exceeds model DRAM";
  if (p.instructions.empty()) return "program has no instructions";
  if (p.instructions.size() * kInstrSize > ex.bound - ex.base) {
    return "instructions do not fit inside the exec region";
  }
  const auto n = p.instructions.size();
  if (p.entry_point >= n) return "entry point outside the program";
  for (auto e : p.core_entry_points) {
    if (e >= n) return "core entry point outside the program";
  }
  if (!p.fault_handler.next && p.fault_handler.index >= n) return "fault handler outside the program";
  for (const auto& seg : p.data) {
    const Address end = seg.addr + seg.bytes.size();
    if (end > model_dram_size) return "data segment exceeds model DRAM";
    if (seg.addr < ex.bound && end > ex.base) return "data segment overlaps the exec region";
  }
  return std::nullopt;
}

Json to_json(const GuestProgram& p) {
  Json instrs = Json::array();
  for (std::size_t i = 0; i < p.instructions.size();) {
    std::size_t run = 1;
    while (i + run < p.instructions.size() && p.instructions[i + run] == p.instructions[i]) ++run;
    Json j = instr_json(p.instructions[i]);
    if (run > 1) j["repeat"] = run;
    instrs.push_back(std::move(j));
    i += run;
  }
  Json data = Json::array();
  for (const auto& seg : p.data) {
    Json d{{"addr", seg.addr}};
    if (printable(seg.bytes)) d["text"] = crypto::to_string(seg.bytes);
    else d["hex"] = crypto::to_hex(seg.bytes);
    data.push_back(std::move(d));
  }
  Json j{{"name", p.name},
         {"expected_outcome", p.expected_outcome},
         {"exec_region", {{"base", p.exec_region.base}, {"bound", p.exec_region.bound}}},
         {"entry_point", p.entry_point},
         {"instructions", std::move(instrs)},
         {"data", std::move(data)}};
  if (p.fault_handler.next) j["fault_handler"] = "next";
  else j["fault_handler"] = p.fault_handler.index;
  if (!p.core_entry_points.empty()) j["core_entry_points"] = p.core_entry_points;
  return j;
}

GuestProgram program_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("guest program must be a JSON object");
  GuestProgram p;
  try {
    p.name = j.value("name", "");
    p.expected_outcome = j.value("expected_outcome", "");
    if (j.contains("exec_region")) {
      p.exec_region.base = field<Address>(j.at("exec_region"), "base");
      p.exec_region.bound = field<Address>(j.at("exec_region"), "bound");
    }
    p.entry_point = j.value("entry_point", std::uint64_t{0});
    if (j.contains("fault_handler")) {
      const auto& fh = j.at("fault_handler");
      if (fh.is_string()) {
        if (fh.get<std::string>() != "next") throw std::invalid_argument("fault_handler must be an index or \"next\"");
        p.fault_handler.next = true;
      } else {
        p.fault_handler.index = fh.get<std::uint64_t>();
      }
    }
    if (j.contains("core_entry_points")) {
      p.core_entry_points = j.at("core_entry_points").get<std::vector<std::uint64_t>>();
    }
    if (!j.contains("instructions") || !j.at("instructions").is_array()) {
      throw std::invalid_argument("missing instructions array");
    }
    for (const auto& ij : j.at("instructions")) {
      auto in = instr_from_json(ij);
      auto repeat = ij.value("repeat", std::size_t{1});
      p.instructions.insert(p.instructions.end(), repeat, in);
    }
    if (j.contains("data")) {
      for (const auto& dj : j.at("data")) {
        DataSegment seg;
        seg.addr = field<Address>(dj, "addr");
        if (dj.contains("text")) {
          seg.bytes = crypto::to_bytes(dj.at("text").get<std::string>());
        } else if (dj.contains("hex")) {
          auto b = crypto::from_hex(dj.at("hex").get<std::string>());
          if (!b) throw std::invalid_argument("bad hex in data segment");
          seg.bytes = std::move(*b);
        } else {
          throw std::invalid_argument("data segment needs 'text' or 'hex'");
        }
        p.data.push_back(std::move(seg));
      }
    }
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("malformed guest program: ") + e.what());
  }
  return p;
}

}  // namespace guillotine::guests
