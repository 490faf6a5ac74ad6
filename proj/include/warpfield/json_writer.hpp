#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace warpfield {

/// Prints a double as a decimal literal that round-trips exactly
/// (17 significant digits).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Minimal streaming JSON emitter. nlohmann::json is used for parsing, but
/// its printer emits shortest-round-trip numbers; the file formats here pin
/// 17-significant-digit decimals, so writing goes through this class.
class JsonWriter {
public:
    void begin_object() { separate(); out_ << '{'; stack_.push_back(State::Object); }
    void end_object() { out_ << '}'; stack_.pop_back(); mark_value(); }
    void begin_array() { separate(); out_ << '['; stack_.push_back(State::Array); }
    void end_array() { out_ << ']'; stack_.pop_back(); mark_value(); }

    void key(const std::string& k) {
        separate();
        write_string(k);
        out_ << ':';
        pending_key_ = true;
    }

    void value(double v) { separate(); out_ << format_double(v); mark_value(); }
    void value(int v) { separate(); out_ << v; mark_value(); }
    void value(std::size_t v) { separate(); out_ << v; mark_value(); }
    void value(bool v) { separate(); out_ << (v ? "true" : "false"); mark_value(); }
    void value(const std::string& v) { separate(); write_string(v); mark_value(); }
    void value(const char* v) { value(std::string(v)); }

    std::string str() const { return out_.str(); }

private:
    enum class State { Object, Array };

    void separate() {
        if (pending_key_) { pending_key_ = false; return; }
        if (!stack_.empty() && need_comma_) out_ << ',';
        need_comma_ = false;
    }
    void mark_value() { need_comma_ = true; }

    void write_string(const std::string& s) {
        out_ << '"';
        for (char c : s) {
            switch (c) {
                case '"': out_ << "\\\""; break;
                case '\\': out_ << "\\\\"; break;
                case '\n': out_ << "\\n"; break;
                case '\t': out_ << "\\t"; break;
                default: out_ << c;
            }
        }
        out_ << '"';
    }

    std::ostringstream out_;
    std::vector<State> stack_;
    bool pending_key_ = false;
    bool need_comma_ = false;
};

} // namespace warpfield
