// Placeholder while the library comes up; the real CLI lands with run_config.
#include <cstdio>

int main() {
    std::puts("rre: not yet wired");
    return 1;
}
