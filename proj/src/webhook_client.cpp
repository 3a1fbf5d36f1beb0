#include <httplib.h>

#include "wlds/alerting.hpp"

namespace wlds::alerting {

HttpPoster make_http_poster(std::chrono::milliseconds timeout) {
  return [timeout](const std::string& url, const std::string& body) -> int {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return -1;
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string base = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client cli(base);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    auto res = cli.Post(path, body, "application/json");
    if (!res) return -1;
    return res->status;
  };
}

}  // namespace wlds::alerting
