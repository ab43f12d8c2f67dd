#include <cstdio>
int main(int argc, char**) { (void)argc; return 0; }
