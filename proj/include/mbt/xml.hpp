#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mbt::xml {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, int line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

/// One element of the small XML dialect used by model and control files.
/// Attribute order is preserved so a parse/serialize round trip is stable.
struct Element {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::vector<Element> children;
    int line = 0;

    Element() = default;
    explicit Element(std::string element_name) : name(std::move(element_name)) {}

    const std::string* find_attr(std::string_view key) const;
    std::string attr_or(std::string_view key, std::string fallback = "") const;
    bool has_attr(std::string_view key) const { return find_attr(key) != nullptr; }
    void set_attr(std::string_view key, std::string value);

    const Element* first_child(std::string_view child_name) const;
    std::vector<const Element*> children_named(std::string_view child_name) const;
};

/// Parses a document and returns its root element. Comments, processing
/// instructions and whitespace-only text are skipped; other text content is
/// rejected (the dialect is attribute-only).
Element parse(std::string_view text);

/// Canonical serialization: XML declaration, two-space indent, attributes in
/// stored order, self-closing tags for childless elements, LF line endings.
std::string serialize(const Element& root);

std::string escape_attr(std::string_view raw);

} // namespace mbt::xml
