#include "mbt/xml.hpp"

#include <cctype>
#include <sstream>

namespace mbt::xml {

const std::string* Element::find_attr(std::string_view key) const {
    for (const auto& [k, v] : attrs) {
        if (k == key) {
            return &v;
        }
    }
    return nullptr;
}

std::string Element::attr_or(std::string_view key, std::string fallback) const {
    const std::string* v = find_attr(key);
    return v ? *v : std::move(fallback);
}

void Element::set_attr(std::string_view key, std::string value) {
    for (auto& [k, v] : attrs) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    attrs.emplace_back(std::string(key), std::move(value));
}

const Element* Element::first_child(std::string_view child_name) const {
    for (const Element& c : children) {
        if (c.name == child_name) {
            return &c;
        }
    }
    return nullptr;
}

std::vector<const Element*> Element::children_named(std::string_view child_name) const {
    std::vector<const Element*> out;
    for (const Element& c : children) {
        if (c.name == child_name) {
            out.push_back(&c);
        }
    }
    return out;
}

namespace {

class Cursor {
public:
    explicit Cursor(std::string_view text) : text_(text) {}

    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    bool starts_with(std::string_view s) const { return text_.substr(pos_).substr(0, s.size()) == s; }
    int line() const { return line_; }

    char take() {
        char c = text_[pos_++];
        if (c == '\n') {
            ++line_;
        }
        return c;
    }

    void skip(size_t n) {
        for (size_t i = 0; i < n && !eof(); ++i) {
            take();
        }
    }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) {
            take();
        }
    }

    /// Advances past the next occurrence of `end`, or throws.
    void skip_until(std::string_view end, const char* what) {
        while (!eof()) {
            if (starts_with(end)) {
                skip(end.size());
                return;
            }
            take();
        }
        throw ParseError(std::string("unterminated ") + what, line_);
    }

private:
    std::string_view text_;
    size_t pos_ = 0;
    int line_ = 1;
};

bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
}

std::string read_name(Cursor& cur) {
    std::string name;
    while (!cur.eof() && is_name_char(cur.peek())) {
        name.push_back(cur.take());
    }
    if (name.empty()) {
        throw ParseError("expected a name", cur.line());
    }
    return name;
}

std::string decode_entities(std::string_view raw, int line) {
    std::string out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != '&') {
            out.push_back(raw[i]);
            continue;
        }
        size_t semi = raw.find(';', i);
        if (semi == std::string_view::npos) {
            throw ParseError("unterminated entity reference", line);
        }
        std::string_view ent = raw.substr(i + 1, semi - i - 1);
        if (ent == "amp") {
            out.push_back('&');
        } else if (ent == "lt") {
            out.push_back('<');
        } else if (ent == "gt") {
            out.push_back('>');
        } else if (ent == "quot") {
            out.push_back('"');
        } else if (ent == "apos") {
            out.push_back('\'');
        } else if (!ent.empty() && ent[0] == '#') {
            int base = 10;
            std::string_view digits = ent.substr(1);
            if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
                base = 16;
                digits = digits.substr(1);
            }
            unsigned long code = std::stoul(std::string(digits), nullptr, base);
            if (code > 0x7f) {
                throw ParseError("non-ASCII character reference not supported", line);
            }
            out.push_back(static_cast<char>(code));
        } else {
            throw ParseError("unknown entity &" + std::string(ent) + ";", line);
        }
        i = semi;
    }
    return out;
}

void skip_misc(Cursor& cur) {
    for (;;) {
        cur.skip_ws();
        if (cur.starts_with("<!--")) {
            cur.skip(4);
            cur.skip_until("-->", "comment");
        } else if (cur.starts_with("<?")) {
            cur.skip(2);
            cur.skip_until("?>", "processing instruction");
        } else if (cur.starts_with("<!DOCTYPE")) {
            cur.skip_until(">", "doctype");
        } else {
            return;
        }
    }
}

Element parse_element(Cursor& cur) {
    if (cur.eof() || cur.peek() != '<') {
        throw ParseError("expected '<'", cur.line());
    }
    Element el;
    el.line = cur.line();
    cur.take();
    el.name = read_name(cur);

    // Attributes.
    for (;;) {
        cur.skip_ws();
        if (cur.eof()) {
            throw ParseError("unterminated start tag <" + el.name, el.line);
        }
        if (cur.peek() == '>' || cur.starts_with("/>")) {
            break;
        }
        int attr_line = cur.line();
        std::string key = read_name(cur);
        cur.skip_ws();
        if (cur.eof() || cur.peek() != '=') {
            throw ParseError("attribute '" + key + "' is missing '='", attr_line);
        }
        cur.take();
        cur.skip_ws();
        if (cur.eof() || (cur.peek() != '"' && cur.peek() != '\'')) {
            throw ParseError("attribute '" + key + "' is missing a quoted value", attr_line);
        }
        char quote = cur.take();
        std::string raw;
        while (!cur.eof() && cur.peek() != quote) {
            if (cur.peek() == '<') {
                throw ParseError("'<' inside attribute value", cur.line());
            }
            raw.push_back(cur.take());
        }
        if (cur.eof()) {
            throw ParseError("unterminated attribute value for '" + key + "'", attr_line);
        }
        cur.take();
        if (el.find_attr(key) != nullptr) {
            throw ParseError("duplicate attribute '" + key + "'", attr_line);
        }
        el.attrs.emplace_back(std::move(key), decode_entities(raw, attr_line));
    }

    if (cur.starts_with("/>")) {
        cur.skip(2);
        return el;
    }
    cur.take(); // '>'

    // Children until the matching end tag.
    for (;;) {
        int text_line = cur.line();
        while (!cur.eof() && cur.peek() != '<') {
            if (!std::isspace(static_cast<unsigned char>(cur.peek()))) {
                throw ParseError("unexpected text content in <" + el.name + ">", text_line);
            }
            cur.take();
        }
        if (cur.eof()) {
            throw ParseError("missing </" + el.name + ">", el.line);
        }
        if (cur.starts_with("<!--")) {
            cur.skip(4);
            cur.skip_until("-->", "comment");
            continue;
        }
        if (cur.starts_with("</")) {
            int end_line = cur.line();
            cur.skip(2);
            std::string end_name = read_name(cur);
            cur.skip_ws();
            if (cur.eof() || cur.take() != '>') {
                throw ParseError("malformed end tag </" + end_name, end_line);
            }
            if (end_name != el.name) {
                throw ParseError("end tag </" + end_name + "> does not match <" + el.name + ">",
                                 end_line);
            }
            return el;
        }
        el.children.push_back(parse_element(cur));
    }
}

void serialize_element(const Element& el, int depth, std::string& out) {
    out.append(static_cast<size_t>(depth) * 2, ' ');
    out.push_back('<');
    out.append(el.name);
    for (const auto& [k, v] : el.attrs) {
        out.push_back(' ');
        out.append(k);
        out.append("=\"");
        out.append(escape_attr(v));
        out.push_back('"');
    }
    if (el.children.empty()) {
        out.append("/>\n");
        return;
    }
    out.append(">\n");
    for (const Element& c : el.children) {
        serialize_element(c, depth + 1, out);
    }
    out.append(static_cast<size_t>(depth) * 2, ' ');
    out.append("</");
    out.append(el.name);
    out.append(">\n");
}

} // namespace

Element parse(std::string_view text) {
    Cursor cur(text);
    skip_misc(cur);
    if (cur.eof()) {
        throw ParseError("document has no root element", cur.line());
    }
    Element root = parse_element(cur);
    skip_misc(cur);
    if (!cur.eof()) {
        throw ParseError("content after root element", cur.line());
    }
    return root;
}

std::string serialize(const Element& root) {
    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    serialize_element(root, 0, out);
    return out;
}

std::string escape_attr(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        switch (c) {
        case '&': out.append("&amp;"); break;
        case '<': out.append("&lt;"); break;
        case '>': out.append("&gt;"); break;
        case '"': out.append("&quot;"); break;
        default: out.push_back(c); break;
        }
    }
    return out;
}

} // namespace mbt::xml
