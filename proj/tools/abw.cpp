#include <iostream>

int main() {
    std::cout << "abw: CLI under construction\n";
    return 1;
}
