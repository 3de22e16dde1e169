fn main() {
    println!("cli scaffolding");
}
