#include <cstdio>

int main() {
  std::puts("advxfer: cli under construction");
  return 0;
}
