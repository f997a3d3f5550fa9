#!/usr/bin/env python3
"""Generate the bundled synthetic recipe corpus (data/recipes.jsonl).

The corpus is fully synthetic: recipes are assembled from templates so the
whole pipeline can be exercised offline. Running this script again with the
same seed reproduces the file byte for byte.
"""

import json
import random
import sys

SEED = 20201019

PROTEINS = ["chicken", "beef", "pork", "turkey", "shrimp", "salmon", "tofu", "sausage", "lamb", "cod"]
VEGETABLES = ["carrot", "celery", "potato", "zucchini", "spinach", "broccoli", "mushroom", "pepper",
              "cabbage", "kale", "corn", "pea", "squash", "leek", "tomato", "cauliflower", "eggplant", "asparagus"]
HERBS = ["basil", "thyme", "rosemary", "parsley", "cilantro", "oregano", "dill", "sage", "mint", "chive"]
FRUITS = ["banana", "strawberry", "blueberry", "mango", "peach", "apple", "pear", "raspberry",
          "pineapple", "cherry", "orange", "lemon", "lime", "kiwi", "plum", "apricot"]
CHEESES = ["cheddar cheese", "parmesan cheese", "mozzarella cheese", "feta cheese", "provolone cheese",
           "goat cheese", "swiss cheese"]
NUTS = ["walnuts", "pecans", "almonds", "cashews", "pistachios", "hazelnuts"]
PASTAS = ["spaghetti", "penne", "linguine", "macaroni", "fettuccine", "rigatoni", "orzo"]
SPIRITS = ["vodka", "rum", "gin", "tequila", "bourbon", "brandy"]
JUICES = ["orange juice", "cranberry juice", "pineapple juice", "apple juice", "grapefruit juice", "lime juice"]

PLURAL = {"potato": "potatoes", "tomato": "tomatoes", "cherry": "cherries", "strawberry": "strawberries",
          "blueberry": "blueberries", "raspberry": "raspberries", "peach": "peaches", "leaf": "leaves",
          "squash": "squash", "corn": "corn", "kale": "kale", "spinach": "spinach", "broccoli": "broccoli",
          "cabbage": "cabbage", "asparagus": "asparagus", "cauliflower": "cauliflower", "eggplant": "eggplants",
          "mango": "mangoes", "celery": "celery"}


def plural(word):
    return PLURAL.get(word, word + "s")


def cap(s):
    return " ".join(w.capitalize() for w in s.split())


def soup(rng):
    veg = rng.sample(VEGETABLES, 2)
    protein = rng.choice(PROTEINS + ["bean", "lentil"])
    herb = rng.choice(HERBS)
    style = rng.choice(["Hearty", "Rustic", "Creamy", "Spicy", "Classic", "Country", "Smoky", "Golden"])
    title = f"{style} {cap(protein)} and {cap(veg[0])} Soup"
    ingredients = [
        f"{rng.choice(['1', '2'])} tablespoons olive oil",
        "1 large onion, chopped",
        f"{rng.choice(['2', '3'])} cloves garlic, minced",
        f"{rng.choice(['1', '2'])} cups chopped {plural(veg[0])}",
        f"1 cup diced {plural(veg[1])}",
        f"{rng.choice(['1', '1 1/2', '2'])} pounds {protein}" if protein not in ("bean", "lentil")
        else f"1 (15 ounce) can {protein}s, drained",
        f"{rng.choice(['4', '6'])} cups chicken broth",
        f"1 teaspoon dried {herb}",
        "salt and pepper to taste",
    ]
    steps = [
        "Heat the oil in a large pot over medium heat.",
        "Add the onion and garlic and cook until soft, about 5 minutes.",
        f"Stir in the {protein} and cook for {rng.choice(['5', '8', '10'])} minutes.",
        f"Add the {veg[0]}, {veg[1]}, broth and {herb}.",
        f"Bring to a boil, then reduce the heat and simmer for {rng.choice(['20', '25', '30', '40'])} minutes.",
        "Season with salt and pepper and serve hot.",
    ]
    return title, ingredients, steps


def salad(rng):
    greens = rng.choice(["lettuce", "spinach", "arugula", "kale", "cabbage"])
    extra = rng.sample(VEGETABLES + FRUITS, 2)
    cheese = rng.choice(CHEESES)
    nut = rng.choice(NUTS)
    style = rng.choice(["Summer", "Crunchy", "Fresh", "Garden", "Harvest", "Bright", "Simple", "Zesty"])
    title = f"{style} {cap(extra[0])} {cap(greens)} Salad"
    ingredients = [
        f"{rng.choice(['4', '6', '8'])} cups {greens}",
        f"1 cup sliced {plural(extra[0])}",
        f"1/2 cup chopped {plural(extra[1])}",
        f"1/2 cup crumbled {cheese}",
        f"1/4 cup toasted {nut}",
        "3 tablespoons olive oil",
        f"2 tablespoons {rng.choice(['balsamic vinegar', 'red wine vinegar', 'lemon juice', 'cider vinegar'])}",
        "1 teaspoon honey",
    ]
    cheese_root = cheese.split()[-1]
    steps = [
        "Whisk together the oil, vinegar and honey in a small bowl.",
        f"Place the {greens} in a large salad bowl.",
        f"Add the {extra[0]} and {extra[1]} and toss gently.",
        f"Sprinkle the {cheese_root} and {nut[:-1] if nut.endswith('s') else nut} over the top.",
        "Drizzle with the dressing just before serving.",
    ]
    return title, ingredients, steps


def baked(rng):
    kind = rng.choice(["Muffins", "Bread", "Cake", "Cookies", "Bars", "Scones"])
    fruit = rng.choice(FRUITS)
    spice = rng.choice(["cinnamon", "nutmeg", "ginger", "cardamom", "vanilla"])
    style = rng.choice(["Easy", "Moist", "Grandma's", "Healthy", "Best", "Chewy", "Soft", "Glazed"])
    title = f"{style} {cap(fruit)} {cap(spice)} {kind}"
    temp = rng.choice(["325", "350", "375"])
    ingredients = [
        f"{rng.choice(['1 1/2', '2', '2 1/4'])} cups all-purpose flour",
        f"{rng.choice(['1/2', '3/4', '1'])} cup white sugar",
        "1 teaspoon baking soda",
        f"1 teaspoon ground {spice}" if spice != "vanilla" else "1 teaspoon vanilla extract",
        f"{rng.choice(['1', '2'])} large eggs",
        f"1/2 cup butter, melted",
        f"1 cup mashed {plural(fruit)}" if fruit == "banana" else f"1 cup chopped {plural(fruit)}",
    ]
    if rng.random() < 0.5:
        ingredients.append(f"1/2 cup chopped {rng.choice(NUTS)}")
    pan = {"Muffins": "a muffin tin", "Bread": "a loaf pan", "Cake": "a cake pan",
           "Cookies": "a baking sheet", "Bars": "a square baking dish", "Scones": "a baking sheet"}[kind]
    steps = [
        f"Preheat the oven to {temp} degrees F and grease {pan}.",
        f"In a large bowl, mix the flour, sugar, baking soda and {spice}.",
        f"In another bowl, beat the eggs with the butter, then fold in the {fruit}.",
        "Stir the wet mixture into the dry ingredients until just combined.",
        f"Pour the batter into the pan and bake for {rng.choice(['15', '20', '25', '45', '55'])} minutes.",
        "Cool before serving.",
    ]
    return title, ingredients, steps


def stir_fry(rng):
    protein = rng.choice(PROTEINS)
    veg = rng.sample(VEGETABLES, 2)
    sauce = rng.choice(["soy sauce", "oyster sauce", "hoisin sauce", "teriyaki sauce", "fish sauce"])
    style = rng.choice(["Quick", "Weeknight", "Garlic", "Ginger", "Sesame", "Sweet and Sour", "Honey", "Chili"])
    title = f"{style} {cap(protein)} {cap(veg[0])} Stir Fry"
    ingredients = [
        f"1 pound {protein}, cut into strips" if protein not in ("shrimp", "tofu")
        else f"1 pound {protein}",
        f"2 cups sliced {plural(veg[0])}",
        f"1 cup chopped {plural(veg[1])}",
        f"3 tablespoons {sauce}",
        "1 tablespoon vegetable oil",
        "2 cloves garlic, minced",
        "1 tablespoon grated ginger",
        f"{rng.choice(['2', '3', '4'])} cups cooked rice",
    ]
    sauce_root = sauce.split()[-1]
    steps = [
        "Heat the oil in a wok or large skillet over high heat.",
        f"Add the {protein} and stir fry until browned, about {rng.choice(['3', '4', '5', '6'])} minutes.",
        "Add the garlic and ginger and cook for 1 minute.",
        f"Toss in the {veg[0]} and {veg[1]} and cook until tender.",
        f"Pour in the {sauce_root} and stir to coat.",
        "Serve over the rice.",
    ]
    return title, ingredients, steps


def smoothie(rng):
    fruits = rng.sample(FRUITS, 2)
    base = rng.choice(["milk", "yogurt", "almond milk", "coconut milk", "orange juice"])
    style = rng.choice(["Morning", "Tropical", "Berry Blast", "Power", "Sunrise", "Creamy", "Cool", "Green"])
    title = f"{style} {cap(fruits[0])} {cap(fruits[1])} Smoothie"
    ingredients = [
        f"1 cup frozen {plural(fruits[0])}",
        f"1/2 cup fresh {plural(fruits[1])}",
        f"1 cup {base}",
        "1 tablespoon honey",
        "1/2 cup ice cubes",
    ]
    if rng.random() < 0.5:
        ingredients.append("1 tablespoon chia seeds")
    base_root = base.split()[-1]
    steps = [
        f"Place the {fruits[0]} and {fruits[1]} in a blender.",
        f"Pour in the {base_root} and add the honey and ice.",
        f"Blend on high speed for {rng.choice(['30', '45', '60'])} seconds until smooth.",
        "Pour into tall glasses and serve immediately.",
    ]
    return title, ingredients, steps


def pasta(rng):
    shape = rng.choice(PASTAS)
    veg = rng.choice(VEGETABLES)
    cheese = rng.choice(CHEESES)
    herb = rng.choice(HERBS)
    style = rng.choice(["Creamy", "Baked", "Lemon", "Garlic", "One Pot", "Rustic", "Tuscan", "Pesto"])
    title = f"{style} {cap(veg)} {cap(shape)}"
    ingredients = [
        f"1 pound {shape}",
        "2 tablespoons butter",
        "3 cloves garlic, minced",
        f"2 cups chopped {plural(veg)}",
        f"1 cup {rng.choice(['heavy cream', 'tomato sauce', 'chicken broth', 'milk'])}",
        f"1/2 cup grated {cheese}",
        f"2 tablespoons chopped fresh {herb}",
    ]
    liquid = ingredients[4].split()[-1]
    steps = [
        f"Cook the {shape} in a large pot of boiling salted water until al dente, then drain.",
        "Melt the butter in a large skillet over medium heat.",
        f"Add the garlic and {veg} and cook for {rng.choice(['4', '5', '6', '7'])} minutes.",
        f"Stir in the {liquid} and simmer until slightly thickened.",
        f"Toss the {shape} with the sauce and the {cheese.split()[-1]}.",
        f"Garnish with {herb} and serve.",
    ]
    return title, ingredients, steps


def cocktail(rng):
    spirit = rng.choice(SPIRITS)
    juice = rng.choice(JUICES)
    fruit = rng.choice(["lime", "lemon", "orange", "cherry", "mint", "strawberry"])
    style = rng.choice(["Sunset", "Island", "Classic", "Party", "Frozen", "Sparkling", "Midnight", "Harbor"])
    title = f"{style} {cap(spirit)} {cap(juice.split()[0])} Cocktail"
    ingredients = [
        f"{rng.choice(['1', '1 1/2', '2'])} ounces {spirit}",
        f"{rng.choice(['3', '4', '6'])} ounces {juice}",
        "1 teaspoon simple syrup",
        "1 cup ice",
        f"1 {fruit} wedge, for garnish" if fruit != "mint" else "1 sprig fresh mint, for garnish",
    ]
    steps = [
        f"Combine {spirit} and {juice} in a shaker.",
        "Add the syrup and fill the shaker with ice.",
        f"Shake well for {rng.choice(['10', '15', '20'])} seconds.",
        "Strain into a chilled glass over fresh ice.",
        f"Garnish with the {fruit} and serve at once.",
    ]
    return title, ingredients, steps


def roast(rng):
    protein = rng.choice(["chicken", "beef", "pork", "lamb", "turkey"])
    veg = rng.sample(["potato", "carrot", "onion", "parsnip", "turnip", "beet", "squash"], 2)
    herb = rng.choice(HERBS)
    style = rng.choice(["Sunday", "Herb", "Slow", "Garlic Butter", "Honey Glazed", "Lemon Pepper", "Balsamic", "Mustard"])
    title = f"{style} Roast {cap(protein)} with {cap(plural(veg[0]))}"
    temp = rng.choice(["350", "375", "400", "425"])
    ingredients = [
        f"{rng.choice(['3', '4', '5'])} pounds {protein}",
        f"{rng.choice(['4', '6'])} {plural(veg[0])}, quartered",
        f"3 {plural(veg[1])}, cut into chunks",
        "3 tablespoons olive oil",
        f"2 tablespoons chopped fresh {herb}",
        "1 teaspoon kosher salt",
        "1/2 teaspoon ground black pepper",
    ]
    steps = [
        f"Preheat the oven to {temp} degrees F.",
        f"Rub the {protein} with the oil, {herb}, salt and pepper.",
        f"Arrange the {veg[0]} and {veg[1]} around the {protein} in a roasting pan.",
        f"Roast for {rng.choice(['1', '1 1/2', '2'])} hours, basting occasionally.",
        "Let rest for 10 minutes before slicing.",
    ]
    return title, ingredients, steps


def frittata(rng):
    veg = rng.sample(VEGETABLES, 2)
    cheese = rng.choice(CHEESES)
    herb = rng.choice(HERBS)
    kind = rng.choice(["Frittata", "Omelette", "Scramble", "Egg Bake", "Quiche"])
    title = f"{cap(veg[0])} and {cap(cheese.split()[0])} {kind}"
    ingredients = [
        f"{rng.choice(['4', '6', '8'])} eggs",
        "1/4 cup milk",
        f"1 cup chopped {plural(veg[0])}",
        f"1/2 cup diced {plural(veg[1])}",
        f"1/2 cup shredded {cheese}",
        "1 tablespoon butter",
        f"1 tablespoon chopped {herb}",
    ]
    steps = [
        "Whisk the eggs and milk together in a bowl.",
        "Melt the butter in an ovenproof skillet over medium heat.",
        f"Cook the {veg[0]} and {veg[1]} until tender, about {rng.choice(['3', '5', '7'])} minutes.",
        "Pour the egg mixture over the vegetables and cook until the edges set.",
        f"Top with the {cheese.split()[-1]} and {herb}, then broil until golden.",
    ]
    return title, ingredients, steps


BUILDERS = [soup, salad, baked, stir_fry, smoothie, pasta, cocktail, roast, frittata]

# Hand-written rows that the preprocessing filters must reject.
REJECTS = [
    ("Plain Toast", ["1 slice bread"], "Toast the bread until golden brown. Spread with butter while it is still hot and serve it right away with jam or honey on the side."),
    ("Boiled Egg", ["1 egg", "1 pinch salt"], "Boil the egg for nine minutes."),
    ("Iced Water", ["1 cup water", "1 cup ice"], "Pour the water over the ice. Serve."),
    ("Buttered Rice", ["1 cup rice", "1 tablespoon butter"], "Cook the rice in boiling water for eighteen minutes then stir in the butter and season with a little salt before serving warm to everyone at the table"),
    ("Mystery Snack", ["2 cups", "1/2 teaspoon"], "Mix everything together in a large bowl. Bake for twenty minutes at a moderate temperature until done, then cool and slice into squares."),
    ("Nutty Oat Bars", ["2 cups rolled oats", "1/2 cup honey", "1/2 cup peanut butter"], "Warm the honey and peanut butter in a saucepan. Stir in the oats and press into a pan. Chill for two hours and cut into bars. Nutrition information: 210 calories per bar."),
    ("Quick Cocoa", ["1 cup milk", "2 tablespoons cocoa powder"], "Heat the milk in a small saucepan until steaming. Whisk in the cocoa until smooth and pour into a mug. Submitted by a home cook from the old recipe box."),
    ("Sliced Melon", ["1 melon"], "Cut the melon in half and scoop out the seeds. Slice into wedges and arrange on a platter. Chill well before serving to guests on a hot day."),
    ("Salted Nuts", ["1 cup almonds", "1 teaspoon salt"], "Toss the almonds with salt and roast them."),
    ("Garlic Bread Bites", ["1 loaf bread", "3 cloves garlic", "1/4 cup butter"], "Spread garlic butter on sliced bread and bake until crisp and golden at the edges, about ten minutes in total."),
    ("Lemon Water", ["1 lemon", "2 cups water"], "Squeeze. Stir."),
    ("Honey Tea", ["1 tea bag", "1 teaspoon honey", "1 cup boiling water"], "Steep the tea bag in the boiling water for four minutes. Remove the bag and stir in the honey. Recipe by the tea club newsletter staff."),
]


def main():
    rng = random.Random(SEED)
    rows = []
    seen = set()
    n_target = 230
    i = 0
    while len(rows) < n_target:
        builder = BUILDERS[i % len(BUILDERS)]
        i += 1
        title, ingredients, steps = builder(rng)
        if title in seen:
            continue
        seen.add(title)
        if len(steps) > 4 and rng.random() < 0.3:
            steps = steps[:-1] if rng.random() < 0.5 else steps
        rows.append({"title": title, "ingredients": ingredients, "instructions": " ".join(steps)})
    for title, ingredients, instructions in REJECTS:
        rows.append({"title": title, "ingredients": ingredients, "instructions": instructions})
    rng.shuffle(rows)
    out = sys.stdout if len(sys.argv) < 2 else open(sys.argv[1], "w", encoding="utf-8")
    for n, row in enumerate(rows):
        rec = {"id": f"r{n:04d}", "title": row["title"], "ingredients": row["ingredients"],
               "instructions": row["instructions"]}
        out.write(json.dumps(rec, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
